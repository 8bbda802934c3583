"""Score predictions and run a strategy over a dataset with a worker pool."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from .agent.backends import ModelBackend, Segmenter
from .agent.pipeline import MapConfig, Prediction
from .agent.strategies import Strategy, run_strategy, validate_strategy
from .dataset import Sample
from .imaging import ImageCache
from .metrics import (
    TASK_DIMENSION,
    ParseStatus,
    ScoreRecord,
    best_box_score,
    counting_score,
    greedy_match,
    option_score,
    s_mask,
    soft_f1,
)
from .parsing import AnswerKind
from .rle import MaskError, RleMask


def score_prediction(sample: Sample, pred: Prediction) -> ScoreRecord:
    """Continuous score of a pixel-space prediction against the sample's target."""
    detail: dict = {}
    if pred.error:
        detail["error"] = pred.error
    if pred.empty:
        return ScoreRecord(sample.id, sample.task, 0.0, ParseStatus.EMPTY, detail, pred.calls)
    answer = pred.answer
    if not answer.ok:
        detail["invalid_reason"] = answer.invalid_reason or "null answer"
        return ScoreRecord(sample.id, sample.task, 0.0, ParseStatus.INVALID, detail, pred.calls)
    fmt = sample.answer_format
    if fmt in ("hbb", "obb"):
        gts = sample.target_boxes()
        if sample.is_multi:
            match = greedy_match(gts, list(answer.boxes))
            detail.update(T=match.T, fp=match.fp_count, fn=match.fn_count)
            score = soft_f1(match)
        else:
            score = best_box_score(gts[0], answer.boxes)
    elif fmt == "mask":
        if pred.mask is None:
            detail["invalid_reason"] = "no mask produced"
            return ScoreRecord(sample.id, sample.task, 0.0, ParseStatus.INVALID, detail, pred.calls)
        try:
            pm = RleMask.from_text(pred.mask, sample.height, sample.width)
        except MaskError as exc:
            detail["invalid_reason"] = f"unusable mask: {exc}"
            return ScoreRecord(sample.id, sample.task, 0.0, ParseStatus.INVALID, detail, pred.calls)
        score = s_mask(sample.target_mask(), pm)
    elif fmt == "count":
        score = counting_score(sample.target, answer.count if answer.kind is AnswerKind.COUNT else None)
    else:
        score = float(option_score(sample.target, answer))
    return ScoreRecord(sample.id, sample.task, score, ParseStatus.OK, detail, pred.calls)


@dataclass
class SampleResult:
    sample: Sample
    prediction: Prediction
    record: ScoreRecord
    latency: float

    def to_record(self, strategy: str, include_prediction: bool = True) -> dict:
        r = self.record
        out = {
            "sample_id": r.sample_id,
            "task": r.task,
            "dimension": TASK_DIMENSION.get(r.task),
            "raw_score": r.raw_score,
            "score": r.display_score,
            "parse_status": r.parse_status.value,
            "calls": r.calls,
            "strategy": strategy,
            "detail": {**r.detail, **_trace_detail(self.prediction)},
        }
        if include_prediction:
            out["prediction"] = self.prediction.to_dict()
        return out


def _trace_detail(pred: Prediction) -> dict:
    keep = {}
    for key in ("discovery_fallback", "k", "tiles", "oracle", "all_null", "resized"):
        if key in pred.trace:
            keep[key] = pred.trace[key]
    return keep


def evaluate(
    samples: Sequence[Sample],
    images: ImageCache,
    backend: ModelBackend,
    strategy: Strategy,
    cfg: MapConfig | None = None,
    segmenter: Segmenter | None = None,
    workers: int = 1,
    oracle_allowed: bool = False,
    record_prompts: bool = True,
) -> list[SampleResult]:
    """Run ``strategy`` on every sample; results keep dataset order.

    Configuration problems raise before the first backend call. Transport
    failures only affect their own sample, which is scored as EMPTY.
    """
    cfg = cfg or MapConfig()
    validate_strategy(strategy, samples, oracle_allowed)
    if workers < 1:
        raise ValueError("workers must be >= 1")

    def one(sample: Sample) -> SampleResult:
        image = images.get(sample.image)
        if (image.width, image.height) != (sample.width, sample.height):
            raise ValueError(f"{sample.image} is {image.width}x{image.height}, record says "
                             f"{sample.width}x{sample.height}")
        t0 = time.perf_counter()
        pred = run_strategy(backend, sample, image, strategy, cfg, segmenter, record_prompts)
        latency = time.perf_counter() - t0
        return SampleResult(sample, pred, score_prediction(sample, pred), latency)

    # visit samples grouped by image so the cache decodes each image once
    order = sorted(range(len(samples)), key=lambda i: samples[i].image)
    if workers == 1:
        done = [one(samples[i]) for i in order]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(one, [samples[i] for i in order]))
    results: list[SampleResult] = [None] * len(samples)  # type: ignore[list-item]
    for i, r in zip(order, done):
        results[i] = r
    return results
