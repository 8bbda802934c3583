"""Exit criteria for the build, one test per criterion.

Run on their own with ``pytest -m acceptance``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

from __future__ import annotations

import math
import random
import time
from collections import Counter

import numpy as np
import pytest

from fixtures import H, W, one_per_task
from microeval.agent.backends import ScriptedBackend, TransportError, fingerprint
from microeval.agent.oracle import OracleBackend
from microeval.agent.pipeline import MapConfig, RoiBudgetPolicy, run_map
from microeval.agent.strategies import Strategy, run_strategy
from microeval.coords import Convention, CoordFrame, from_abs, to_abs
from microeval.dataset import REGION_TASKS, Sample, load_dataset
from microeval.diagnosis import (
    AnnotatedObject,
    DiagnosisContext,
    DiagnosisLabel as L,
    classify,
    diagnosis_histogram,
    pearson,
    spearman,
)
from microeval.evaluate import evaluate
from microeval.geometry import GeomBox, RectRegion, iou
from microeval.imaging import ImageCache, ImageCanvas
from microeval.metrics import (
    TASKS,
    MatchResult,
    ParseStatus,
    aggregate,
    counting_score,
    greedy_match,
    s_box,
    s_mask,
    soft_f1,
)
from microeval.parsing import AnswerKind, AnswerSpec, BoxFormat, parse_answer, parse_local_answer
from microeval.report import write_run
from microeval.rle import RleMask, box_fill_mask, rle_compress, rle_decode, rle_decompress, rle_encode
from microeval.taskgen import SceneParams, SplitPlan, generate_suite, self_score
from oracles import brute_greedy, hand_s_box, mp_pearson, mp_spearman, ref_compress, ref_counts, scan_iou

pytestmark = pytest.mark.filterwarnings("error::RuntimeWarning")


def criterion(number: int, name: str):
    return pytest.mark.acceptance(criterion=number, name=name)


@pytest.fixture(scope="module")
def suite200(tmp_path_factory):
    """200 samples: 13 for the first eight tasks, 12 for the rest."""
    quotas = {t: {"val": 13 if i < 8 else 12} for i, t in enumerate(TASKS)}
    out = tmp_path_factory.mktemp("suite200")
    path = generate_suite(out, SplitPlan(quotas), seed=2024, params=SceneParams())["val"]
    return path, load_dataset(path)


@pytest.fixture(scope="module")
def balanced(tmp_path_factory):
    out = tmp_path_factory.mktemp("balanced")
    path = generate_suite(out, SplitPlan.balanced_validation(100), seed=99, params=SceneParams())["val"]
    return path, load_dataset(path)


# 1 ---------------------------------------------------------------------------


@criterion(1, "metric formulas match hand-derived values to 1e-6 in under 1 s")
def test_metric_formulas():
    t0 = time.perf_counter()
    g = GeomBox.hbb(0, 0, 10, 10)
    # shifted by half a width: IoU 1/3, d^2 = 25, sigma^2 = 10^2 + 10^2 from the target's enclosing box
    assert s_box(g, GeomBox.hbb(5, 0, 15, 10)) == pytest.approx(hand_s_box(1 / 3, 25, 200), abs=1e-6)
    assert s_box(g, GeomBox.hbb(5, 0, 15, 10)) == pytest.approx(0.92167, abs=1e-5)
    assert s_box(g, g) == 1.0
    m = box_fill_mask(GeomBox.hbb(0, 0, 10, 5), 10, 10)
    p = box_fill_mask(GeomBox.hbb(0, 0, 5, 10), 10, 10)
    # IoU 25/75, centroids (4.5, 2) and (2, 4.5), tight-box diagonal^2 = 125
    assert s_mask(m, p) == pytest.approx(1 / 3 + (2 / 3) * math.exp(-12.5 / 125), abs=1e-6)
    assert counting_score(50, 49) == pytest.approx(0.98, abs=1e-6)
    assert counting_score(0, 0) == 1.0 and counting_score(0, 3) == 0.0 and counting_score(4, 12) == 0.0
    assert soft_f1(MatchResult([(0, 0, 0.8)], 1, 1)) == pytest.approx(0.8 / 1.8, abs=1e-6)
    # T = 1.5 with one miss: 1.5 / (1.5 + 0.5)
    assert soft_f1(MatchResult([(0, 0, 1.0), (1, 1, 0.5)], 0, 1)) == pytest.approx(0.75, abs=1e-6)
    assert time.perf_counter() - t0 < 1.0


# 2 ---------------------------------------------------------------------------


def _quantized_box(rng: random.Random) -> GeomBox:
    x, y = rng.randrange(0, 40, 5), rng.randrange(0, 40, 5)
    if rng.random() < 0.3:
        cx, cy, w, h, a = x + 5, y + 5, rng.choice([4, 8, 12]), rng.choice([4, 8]), rng.choice([0, 30, 45])
        c, s = math.cos(math.radians(a)), math.sin(math.radians(a))
        pts = [(cx + dx * c - dy * s, cy + dx * s + dy * c)
               for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2))]
        return GeomBox.obb(pts)
    return GeomBox.hbb(x, y, x + rng.choice([5, 10, 15]), y + rng.choice([5, 10, 15]))


@criterion(2, "greedy matching equals exhaustive greedy on 1000 random instances")
def test_matching_oracle():
    rng = random.Random(2)
    for _ in range(1000):
        gts = [_quantized_box(rng) for _ in range(rng.randint(0, 4))]
        preds = [_quantized_box(rng) for _ in range(rng.randint(0, 4))]
        if gts and rng.random() < 0.3:
            preds.append(gts[0])  # duplicates create exact ties
        preds = preds[:4]
        m = greedy_match(gts, preds)
        pairs, fp, fn = brute_greedy([[s_box(g, p) for p in preds] for g in gts], len(preds))
        assert m.pairs == pairs
        assert (m.fp_count, m.fn_count) == (fp, fn)
        assert m.T == pytest.approx(math.fsum(s for _, _, s in pairs), abs=1e-12)


# 3 ---------------------------------------------------------------------------


def _random_mask(rng: np.random.Generator) -> np.ndarray:
    h, w = (int(v) for v in rng.integers(1, 513, size=2))
    style = rng.integers(0, 4)
    if style == 0:
        return rng.random((h, w)) < rng.random()
    if style == 1:
        m = np.zeros((h, w), dtype=bool)
        for _ in range(rng.integers(0, 6)):
            r0, c0 = rng.integers(0, h), rng.integers(0, w)
            m[r0:r0 + rng.integers(1, h + 1), c0:c0 + rng.integers(1, w + 1)] = True
        return m
    if style == 2:
        return np.full((h, w), bool(rng.integers(0, 2)))
    yy, xx = np.mgrid[:h, :w]
    return (yy - h / 2) ** 2 + (xx - w / 3) ** 2 < (rng.random() * max(h, w)) ** 2


@criterion(3, "RLE round-trips 1000 random masks exactly and matches the reference codec")
def test_rle_codec():
    assert ref_compress([0, 1, 3], delta_from=2) == "013"
    assert rle_compress(RleMask(2, 2, (0, 1, 3))) == "013"
    rng = np.random.default_rng(3)
    masks = [_random_mask(rng) for _ in range(1000)]
    elapsed = 0.0
    for i, mask in enumerate(masks):
        t0 = time.perf_counter()
        enc = rle_encode(mask)
        text = rle_compress(enc)
        back = rle_decode(rle_decompress(text, *mask.shape))
        elapsed += time.perf_counter() - t0
        assert np.array_equal(back, mask)
        assert text == ref_compress(list(enc.counts), delta_from=3)
        if i < 40 and mask.size <= 4096:
            assert list(enc.counts) == ref_counts(mask)
    assert elapsed < 10.0


# 4 ---------------------------------------------------------------------------


def _random_polygon(rng: random.Random, near: list | None = None) -> list[tuple[float, float]]:
    if near is None:
        cx, cy = rng.uniform(0, 300), rng.uniform(0, 300)
        w, h = rng.uniform(10, 120), rng.uniform(10, 120)
    else:
        xs, ys = [p[0] for p in near], [p[1] for p in near]
        cx = sum(xs) / 4 + rng.uniform(-0.4, 0.4) * (max(xs) - min(xs))
        cy = sum(ys) / 4 + rng.uniform(-0.4, 0.4) * (max(ys) - min(ys))
        w, h = rng.uniform(10, 120), rng.uniform(10, 120)
    angle = 0.0 if rng.random() < 0.4 else rng.uniform(0, math.pi)
    c, s = math.cos(angle), math.sin(angle)
    return [(cx + dx * c - dy * s, cy + dx * s + dy * c)
            for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2))]


def _as_box(poly) -> GeomBox:
    xs, ys = [p[0] for p in poly], [p[1] for p in poly]
    if len({round(x, 9) for x in xs}) == 2 and len({round(y, 9) for y in ys}) == 2:
        return GeomBox.hbb(min(xs), min(ys), max(xs), max(ys))
    return GeomBox.obb(poly)


@criterion(4, "polygon IoU within 2% of a pixel-count oracle on 1000 HBB/OBB pairs")
def test_geometry_oracle():
    rng = random.Random(4)
    elapsed, worst, overlapping = 0.0, 0.0, 0
    for i in range(1000):
        a = _random_polygon(rng)
        b = _random_polygon(rng, near=a if i % 4 else None)
        box_a, box_b = _as_box(a), _as_box(b)
        assert box_a.area >= 100 and box_b.area >= 100
        t0 = time.perf_counter()
        got = iou(box_a, box_b)
        elapsed += time.perf_counter() - t0
        ref = scan_iou(a, b)
        if ref == 0.0:
            assert got == 0.0
            continue
        overlapping += 1
        worst = max(worst, abs(got - ref) / ref)
        assert abs(got - ref) <= 0.02 * ref, (a, b, got, ref)
    assert overlapping >= 700
    assert elapsed < 30.0


# 5 ---------------------------------------------------------------------------


@criterion(5, "coordinate round-trips within one unit and protocol equivariance")
def test_coordinate_protocol():
    rng = random.Random(5)
    for _ in range(2000):
        w, h = rng.randint(1000, 8192), rng.randint(1000, 8192)
        for conv, unit in ((Convention.THOUSAND, 1.0), (Convention.UNIT, 1e-3), (Convention.ABS, 1.0)):
            frame = CoordFrame(conv, w, h)
            scale = conv.scale
            src = [rng.uniform(0, scale or w), rng.uniform(0, scale or h)]
            back = from_abs(to_abs(src, frame), frame)
            assert all(abs(x - y) <= unit for x, y in zip(src, back))
        small = CoordFrame(rng.choice(list(Convention)), rng.randint(1, 999), rng.randint(1, 999))
        px = [rng.randint(0, small.width), rng.randint(0, small.height)]
        assert to_abs(from_abs(px, small), small) == px

    # scripted replies that say the same thing in each convention
    sample = next(s for s in one_per_task() if s.task == "BG")
    image = ImageCanvas.blank(W, H)
    replies = {Convention.THOUSAND: "[475, 400, 525, 500]", Convention.UNIT: "[0.475, 0.400, 0.525, 0.500]",
               Convention.ABS: "[1900, 1200, 2100, 1500]"}
    native = {conv: run_strategy(ScriptedBackend({"native": f"Final answer: {text}"}), sample, image,
                                 Strategy("native"), MapConfig(protocol=conv)).answer
              for conv, text in replies.items()}
    assert len(set(native.values())) == 1

    # the full agent: an exact oracle speaking each convention
    samples = one_per_task()
    for s in samples:
        answers = {run_map(OracleBackend(samples, exact=True), s, image, MapConfig(protocol=c)).answer
                   for c in Convention}
        assert len(answers) == 1, s.task


# 6 ---------------------------------------------------------------------------


@criterion(6, "MAP with a ground-truth backend scores >= 99 with exact call counts")
def test_map_oracle_end_to_end(suite200):
    path, samples = suite200
    assert len(samples) == 200
    cfg = MapConfig()
    results = evaluate(samples, ImageCache(path.parent), OracleBackend(samples), Strategy("map"), cfg)
    agg = aggregate(r.record for r in results)
    assert agg.overall * 100 >= 99.0
    for r in results:
        s, pred = r.sample, r.prediction
        discovery = s.task not in REGION_TASKS
        k = len(pred.trace["rois"])
        assert k == (1 if not discovery else k) and k <= max(cfg.policy.budget(s.task), 1)
        assert pred.calls == int(discovery) + k + 1 == len(pred.log)
        assert [e["stage"] for e in pred.log] == ["discover"] * discovery + ["inspect"] * k + ["synthesize"]


# 7 ---------------------------------------------------------------------------


@criterion(7, "task-adaptive budget gives 3 to 4 calls per sample; sliding-1024 on 4800x3200 makes 20 calls")
def test_budget_accounting(balanced):
    path, samples = balanced
    results = evaluate(samples, ImageCache(path.parent, max_items=4), OracleBackend(samples), Strategy("map"),
                       MapConfig(policy=RoiBudgetPolicy()))
    mean = math.fsum(r.prediction.calls for r in results) / len(results)
    assert 3.0 <= mean <= 4.0

    boxes = [[100, 100, 130, 130], [2500, 1700, 2530, 1730], [4770, 3170, 4790, 3190]]
    sample = Sample("tiles", "img.png", 4800, 3200, "GC", "How many?", "count", 3, meta={"evidence": boxes})
    pred = run_strategy(OracleBackend([sample]), sample, ImageCanvas.blank(4800, 3200), Strategy.parse("sliding-1024"))
    assert pred.calls == 20 and [e["stage"] for e in pred.log] == ["tile"] * 20
    assert pred.answer.count == 3


# 8 ---------------------------------------------------------------------------


@criterion(8, "generated ground truth scores 1.0 against itself; 100 records per task")
def test_taskgen_self_consistency(balanced):
    _, samples = balanced
    assert Counter(s.task for s in samples) == {t: 100 for t in TASKS}
    kinds = set()
    for s in samples:
        assert self_score(s) == 1.0, s.id
        kinds.add(s.answer_format)
    assert kinds == {"hbb", "obb", "mask", "count", "option"}


# 9 ---------------------------------------------------------------------------

hbb = GeomBox.hbb
OBJECTS = (
    AnnotatedObject(1, "car", hbb(100, 100, 140, 140)),
    AnnotatedObject(2, "car", hbb(300, 100, 340, 140)),
    AnnotatedObject(3, "truck", hbb(500, 100, 540, 140)),
    AnnotatedObject(4, "car", hbb(700, 100, 740, 140)),
)
PLANTED = [
    (None, L.IF), (None, L.IF),
    (hbb(100, 100, 140, 140), L.SUCC), (hbb(102, 98, 141, 139), L.SUCC), (hbb(95, 95, 135, 135), L.SUCC),
    (hbb(100, 700, 140, 740), L.RH), (hbb(700, 300, 720, 320), L.OH), (hbb(850, 50, 860, 60), L.OH),
    (hbb(500, 100, 540, 140), L.CATH), (hbb(505, 105, 545, 145), L.CATH),
    (hbb(300, 100, 340, 140), L.CTXH), (hbb(130, 130, 170, 170), L.CS), (hbb(700, 100, 740, 140), L.OTHER),
]


@criterion(9, "diagnosis histogram, permutation invariance and correlations to 1e-9")
def test_diagnosis_determinism():
    ctx = DiagnosisContext(1, "car", OBJECTS, frozenset({1, 4}), RectRegion(0, 0, 1000, 500))
    labels = [classify(pred, ctx).label for pred, _ in PLANTED]
    assert labels == [lab for _, lab in PLANTED]
    expected = Counter(lab.value for _, lab in PLANTED)
    hist = diagnosis_histogram(labels)
    assert {k: v["count"] for k, v in hist.items() if v["count"]} == dict(expected)
    assert all(hist[k]["percent"] == pytest.approx(100 * n / len(PLANTED)) for k, n in expected.items())
    rng = random.Random(9)
    for _ in range(50):
        objs = list(OBJECTS)
        rng.shuffle(objs)
        shuffled = DiagnosisContext(1, "car", tuple(objs), ctx.referring_ids, ctx.semantic_region)
        assert [classify(p, shuffled) for p, _ in PLANTED] == [classify(p, ctx) for p, _ in PLANTED]

    sizes = [4.0, 6.3, 6.3, 9.1, 12.0, 15.5, 15.5, 15.5, 22.0, 31.7]
    scores = [0.10, 0.22, 0.18, 0.35, 0.35, 0.61, 0.58, 0.70, 0.66, 0.93]
    assert pearson(sizes, scores) == pytest.approx(mp_pearson(sizes, scores), abs=1e-9)
    assert spearman(sizes, scores) == pytest.approx(mp_spearman(sizes, scores), abs=1e-9)
    x, y = [1, 2, 2, 3, 5, 8], [3, 1, 4, 1, 5, 9]
    assert spearman(x, y) == pytest.approx(mp_spearman(x, y), abs=1e-9)


# 10 --------------------------------------------------------------------------

SPECS = [
    AnswerSpec("boxes", BoxFormat.EITHER),
    AnswerSpec("boxes", BoxFormat.HBB, multi=False),
    AnswerSpec("boxes", BoxFormat.OBB),
    AnswerSpec("count"),
    AnswerSpec("option", labels=("A", "B", "C", "D")),
]
PIECES = ["[", "]", ",", " ", "-", ".", "e", "null", "Final answer:", "\n", "(", ")", "A", "B", "Z",
          "1", "0", "999", "1e9", "nan", "inf", "'", '"', "{", "}", ":", "<|", "ß", "😀", "\x00"]


def _fuzz_text(rng: random.Random) -> str:
    if rng.random() < 0.5:
        return "".join(rng.choice(PIECES) for _ in range(rng.randint(0, 40)))
    return "".join(chr(rng.randint(0, 0x2FFF)) for _ in range(rng.randint(0, 60)))


def _valid(r, spec) -> bool:
    if r.kind is AnswerKind.INVALID:
        return bool(r.invalid_reason)
    if spec.kind == "boxes":
        ok = r.kind is AnswerKind.BOXES and len(r.boxes) > 0
        return ok and all(all(math.isfinite(v) and v >= 0 for v in b.coords) for b in r.boxes)
    if spec.kind == "count":
        return r.kind is AnswerKind.COUNT and isinstance(r.count, int) and r.count >= 0
    return r.kind is AnswerKind.OPTION and r.option in spec.labels


class FlakyBackend(OracleBackend):
    """Fails on roughly one call in ten, chosen by request content so reruns agree."""

    def complete(self, request):
        if int(fingerprint(request)[:8], 16) % 10 == 0:
            raise TransportError("injected failure")
        return super().complete(request)


@criterion(10, "parser fuzzing never crashes; failing backend calls score EMPTY and 0")
def test_robustness(suite200, tmp_path):
    rng = random.Random(10)
    for _ in range(10_000):
        text = _fuzz_text(rng)
        for spec in SPECS:
            assert _valid(parse_answer(text, spec), spec)
            local = parse_local_answer(text, spec)
            assert local.kind is AnswerKind.NULL or _valid(local, spec)

    path, samples = suite200
    backend = FlakyBackend(samples)
    results = evaluate(samples, ImageCache(path.parent), backend, Strategy("map"), workers=4)
    assert len(results) == len(samples)
    failed = [r for r in results if r.prediction.error]
    assert 0 < len(failed) < len(results)
    for r in results:
        if r.prediction.error:
            assert r.record.parse_status is ParseStatus.EMPTY and r.record.raw_score == 0.0
        else:
            assert r.record.parse_status is not ParseStatus.EMPTY
    agg = write_run(tmp_path / "run", {"strategy": "map"}, results)
    assert agg.overall < 1.0
    assert (tmp_path / "run" / "records.jsonl").read_text().count('"parse_status":"empty"') == len(failed)
