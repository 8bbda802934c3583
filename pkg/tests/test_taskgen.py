from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from microeval.dataset import load_dataset, validate_sample
from microeval.geometry import GeomBox, RectRegion, center, point_distance
from microeval.imaging import ImageCanvas
from microeval.metrics import TASKS
from microeval.taskgen import (
    DIRECTIONS,
    CategoryInfo,
    QuotaShortfall,
    SceneGenerationError,
    SceneObject,
    SceneParams,
    SceneSpec,
    SplitPlan,
    build_splits,
    compass_bearing,
    derive_classification,
    derive_counting,
    derive_crc,
    derive_detection,
    derive_direction,
    derive_distance,
    direction_label,
    distance_answer,
    generate_pool,
    generate_scene,
    generate_suite,
    self_score,
)


def _obj(oid, cat, x, y, color="red", size=20):
    return SceneObject(oid, cat, "sedan", color, GeomBox.hbb(x, y, x + size, y + size),
                       GeomBox.hbb(x, y, x + size / 2, y + size / 2))


def _scene(objects, w=1000, h=1000):
    return SceneSpec("t", w, h, 0, "scattered", objects, {})


def test_generate_scene_is_deterministic():
    p = SceneParams(width=800, height=600, n_objects=20, min_separation=30)
    a, ia = generate_scene(p, 1)
    b, ib = generate_scene(p, 1)
    assert [o.to_dict() for o in a.objects] == [o.to_dict() for o in b.objects]
    assert np.array_equal(ia.pixels, ib.pixels)
    c, _ = generate_scene(p, 2)
    assert [o.to_dict() for o in c.objects] != [o.to_dict() for o in a.objects]


def test_generate_scene_errors():
    with pytest.raises(SceneGenerationError):
        generate_scene(SceneParams(n_objects=0), 1)
    with pytest.raises(SceneGenerationError):
        generate_scene(SceneParams(width=100, height=100), 1)
    with pytest.raises(SceneGenerationError):
        generate_scene(SceneParams(width=256, height=256, n_objects=200, min_separation=60), 1)


@pytest.mark.parametrize("pattern", ["scattered", "clustered", "linear"])
def test_dense_scene_is_feasible(pattern):
    p = SceneParams(width=4096, height=4096, n_objects=50, min_separation=64, pattern=pattern)
    scene, _ = generate_scene(p, 3)
    assert len(scene.objects) == 50
    cs = [center(o.box) for o in scene.objects]
    assert min(point_distance(a, b) for i, a in enumerate(cs) for b in cs[i + 1:]) >= 64
    for o in scene.objects:
        x1, y1, x2, y2 = o.box.bounds()
        assert 0 <= x1 and 0 <= y1 and x2 <= 4096 and y2 <= 4096


def test_detection_examples():
    cars = [_obj(0, "car", 100, 100), _obj(1, "car", 500, 500), _obj(2, "car", 800, 100)]
    scene = _scene(cars + [_obj(3, "truck", 300, 300)])
    gd = derive_detection(scene, "car")
    assert gd.task == "GD" and len(gd.target) == 3
    rd = derive_detection(scene, "car", RectRegion(400, 400, 700, 700))
    assert rd.task == "RD" and rd.target == [cars[1].box]
    assert derive_detection(scene, "car", RectRegion(0, 800, 200, 1000)) is None


def test_counting_examples():
    ships = [_obj(i, "ship", 50 + 100 * i, 50, color="red" if i < 3 else "white") for i in range(7)]
    scene = _scene(ships)
    assert derive_counting(scene, "ship").target == 7
    assert derive_counting(scene, "ship", attribute="red").target == 3
    assert derive_counting(scene, "ship", region=RectRegion(0, 0, 240, 200)).target == 2
    assert derive_counting(scene, "bus") is None
    assert derive_counting(scene, "bus", allow_zero=True).target == 0


def test_crc_examples():
    cars = [_obj(i, "car", 50 + 60 * i, 50) for i in range(5)] + [_obj(10 + i, "car", 50 + 60 * i, 600) for i in range(3)]
    scene = _scene(cars)
    top, bottom, empty = RectRegion(0, 0, 1000, 300), RectRegion(0, 500, 1000, 800), RectRegion(0, 900, 100, 1000)
    assert derive_crc(scene, top, bottom, "car").target == 2
    assert derive_crc(scene, top, top, "car").target == 0
    assert derive_crc(scene, empty, bottom, "car").target == 3


def test_bearing_and_sectors():
    assert compass_bearing((0, 0), (10, 0)) == pytest.approx(90)
    assert direction_label(90) == "east"
    assert direction_label(44) == "northeast"
    assert direction_label(23) is None
    assert direction_label(0) == "north" and direction_label(359) == "north"
    assert direction_label(180) == "south"


@given(st.floats(0, 360, exclude_max=True))
def test_accepted_bearings_have_margin(b):
    label = direction_label(b, 10)
    if label is not None:
        centre = DIRECTIONS.index(label) * 45.0
        diff = min(abs(b - centre), 360 - abs(b - centre))
        assert diff <= 12.5 + 1e-9


def test_direction_sample():
    a, b = _obj(0, "car", 100, 500), _obj(1, "car", 600, 500)
    scene = _scene([a, b])
    img = ImageCanvas.blank(1000, 1000)
    d = derive_direction(scene, img, a, b)
    assert d.sample.choices[d.sample.target] == "east"
    assert d.image.pixels[..., 0].any() and d.image.pixels[..., 2].any()
    assert not img.pixels.any()  # the scene image is left untouched
    assert derive_direction(scene, img, a, a) is None


def test_distance_examples():
    assert distance_answer([10, 30, 50]) == 0
    assert distance_answer([10, 11]) is None
    assert distance_answer([10, 13]) == 0
    assert distance_answer([10, 30, 50], mode="farthest") == 2
    ref = _obj(0, "car", 0, 0)
    cands = [_obj(1, "car", 10, 0), _obj(2, "car", 30, 0), _obj(3, "car", 50, 0)]
    d = derive_distance(_scene([ref] + cands), ImageCanvas.blank(1000, 1000), ref, cands)
    assert d.sample.target == "A"


def test_classification():
    scene = _scene([_obj(0, "car", 10, 10)])
    inst = scene.objects[0]
    s1 = derive_classification(scene, inst, False, np.random.default_rng(1))
    s2 = derive_classification(scene, inst, False, np.random.default_rng(1))
    assert s1.choices == s2.choices and len(s1.choices) == 4
    assert s1.choices[s1.target] == "car"
    assert set(s1.choices.values()) == {"car", "truck", "van", "bus"}
    tiny = {"car": CategoryInfo("vehicle", ("sedan",), "hbb", (10, 20), "hood"),
            "truck": CategoryInfo("vehicle", ("cargo truck",), "hbb", (10, 20), "cab")}
    assert derive_classification(scene, inst, False, np.random.default_rng(1), tiny) is None


def test_pool_self_consistency():
    params = SceneParams(width=1200, height=900, n_objects=24, min_separation=40)
    pool = generate_pool(params, 11, {t: 2 for t in TASKS})
    for s in pool.samples:
        validate_sample(s)
        assert self_score(s) == 1.0, s.id
    assert {s.task for s in pool.samples} == set(TASKS)


def test_split_plan_and_shortfall():
    params = SceneParams(width=1200, height=900, n_objects=24, min_separation=40)
    pool = generate_pool(params, 5, {"GC": 6, "OC": 6})
    plan = SplitPlan({"GC": {"dev": 2, "val": 3}, "OC": {"val": 4}})
    a = build_splits(pool.samples, plan, seed=3)
    b = build_splits(pool.samples, plan, seed=3)
    assert [s.id for s in a["val"]] == [s.id for s in b["val"]]
    assert len(a["dev"]) == 2 and len(a["val"]) == 7
    assert not {s.id for s in a["dev"]} & {s.id for s in a["val"]}
    with pytest.raises(QuotaShortfall) as info:
        build_splits(pool.samples, SplitPlan({"GC": {"val": 50}}), seed=3)
    assert "GC" in str(info.value)
    with pytest.raises(ValueError):
        SplitPlan({"GC": {"val": -1}})


def test_disjoint_images():
    params = SceneParams(width=1200, height=900, n_objects=24, min_separation=40)
    pool = generate_pool(params, 5, {"GC": 10, "OC": 10})
    out = build_splits(pool.samples, SplitPlan({"GC": {"dev": 2, "val": 2}, "OC": {"dev": 2, "val": 2}}),
                       seed=1, disjoint_images=True)
    scenes = [{s.meta["scene"] for s in out[k]} for k in ("dev", "val")]
    assert not scenes[0] & scenes[1]


@settings(max_examples=5)
@given(st.integers(0, 10**6))
def test_generation_is_pure(seed):
    p = SceneParams(width=512, height=512, n_objects=8, min_separation=30)
    assert generate_scene(p, seed)[0] == generate_scene(p, seed)[0]


def test_suite_is_byte_identical(tmp_path):
    params = SceneParams(width=1000, height=800, n_objects=20, min_separation=40)
    plan = SplitPlan.balanced_validation(1, ["GD", "OC", "DrR"])
    a = generate_suite(tmp_path / "a", plan, 4, params)
    b = generate_suite(tmp_path / "b", plan, 4, params)
    assert a["val"].read_bytes() == b["val"].read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    samples = load_dataset(a["val"])
    assert len(samples) == 3
    for s in samples:
        assert (tmp_path / "a" / s.image).is_file()
