"""Continuous scoring for boxes, box sets, masks, counts and options, plus macro aggregation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .geometry import GeomBox, center, enclosing_diagonal, iou, point_distance
from .parsing import AnswerKind, ParsedAnswer
from .rle import MaskError, RleMask, mask_bbox_diagonal, mask_centroid, mask_iou

DIMENSIONS: dict[str, tuple[str, ...]] = {
    "grounding": ("GD", "RD", "BG", "CG", "MCR"),
    "understanding": ("OC", "FGR", "RS", "CS"),
    "counting": ("GC", "RC", "CC", "CRC"),
    "spatial": ("DrR", "DsR", "PDR"),
}
TASKS: tuple[str, ...] = tuple(t for ts in DIMENSIONS.values() for t in ts)
TASK_DIMENSION = {t: d for d, ts in DIMENSIONS.items() for t in ts}


class ParseStatus(str, Enum):
    OK = "ok"
    INVALID = "invalid"
    EMPTY = "empty"


@dataclass
class ScoreRecord:
    sample_id: str
    task: str
    raw_score: float
    parse_status: ParseStatus = ParseStatus.OK
    detail: dict = field(default_factory=dict)
    calls: int = 0
    diagnosis: str | None = None

    def __post_init__(self) -> None:
        self.parse_status = ParseStatus(self.parse_status)
        if self.parse_status is not ParseStatus.OK:
            self.raw_score = 0.0
        if not 0.0 <= self.raw_score <= 1.0:
            raise ValueError(f"raw score {self.raw_score} outside [0, 1]")

    @property
    def display_score(self) -> float:
        return round(self.raw_score * 100.0, 2)


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    fp_count: int
    fn_count: int

    @property
    def T(self) -> float:
        return math.fsum(s for _, _, s in self.pairs)


def _continuous(overlap: float, distance: float, sigma: float) -> float:
    score = overlap + (1.0 - overlap) * math.exp(-(distance**2) / (sigma**2))
    return min(1.0, max(0.0, score))


def s_box(g: GeomBox, p: GeomBox) -> float:
    """Overlap plus distance-discounted credit for the non-overlapping part."""
    sigma = enclosing_diagonal(g)
    return _continuous(iou(g, p), point_distance(center(g), center(p)), sigma)


def greedy_match(
    gts: Sequence[GeomBox], preds: Sequence[GeomBox], floor: float = 0.0
) -> MatchResult:
    """One-to-one greedy matching on ``s_box``.

    Each round takes the highest-scoring unmatched pair (ties: lowest gt
    index, then lowest prediction index). A pair is eligible only when its
    score is strictly above ``floor``.
    """
    n, m = len(gts), len(preds)
    pairs: list[tuple[int, int, float]] = []
    if n and m:
        scores = np.array([[s_box(g, p) for p in preds] for g in gts], dtype=float)
        live = scores.copy()
        for _ in range(min(n, m)):
            flat = int(np.argmax(live))
            gi, pi = divmod(flat, m)
            best = live[gi, pi]
            if not best > floor:
                break
            pairs.append((gi, pi, float(scores[gi, pi])))
            live[gi, :] = -np.inf
            live[:, pi] = -np.inf
    return MatchResult(pairs, fp_count=m - len(pairs), fn_count=n - len(pairs))


def soft_f1(match: MatchResult) -> float:
    t = match.T
    p_den = t + match.fp_count
    r_den = t + match.fn_count
    precision = t / p_den if p_den > 0 else 0.0
    recall = t / r_den if r_den > 0 else 0.0
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def s_mask(m: RleMask, pred: RleMask | None) -> float:
    """Mask analogue of :func:`s_box`; incompatible or empty predictions score 0."""
    if pred is None or pred.area == 0:
        return 0.0
    try:
        overlap = mask_iou(m, pred)
        sigma = mask_bbox_diagonal(m)
        d = point_distance(mask_centroid(m), mask_centroid(pred))
    except MaskError:
        return 0.0
    return _continuous(overlap, d, sigma)


def counting_score(c: int, c_hat: int | None) -> float:
    if c_hat is None or c_hat < 0:
        return 0.0
    if c == 0:
        return 1.0 if c_hat == 0 else 0.0
    return max(0.0, 1.0 - abs(c_hat - c) / c)


def option_score(y: str, y_hat: ParsedAnswer) -> int:
    return int(y_hat.kind is AnswerKind.OPTION and y_hat.option == y)


def best_box_score(g: GeomBox, preds: Sequence[GeomBox]) -> float:
    return max((s_box(g, p) for p in preds), default=0.0)


@dataclass
class Aggregate:
    task_scores: dict[str, float]
    dimension_scores: dict[str, float]
    overall: float
    task_counts: dict[str, int]
    missing_tasks: list[str]

    def to_dict(self) -> dict:
        def pct(v: float) -> float:
            return round(v * 100.0, 2)

        return {
            "tasks": {
                t: {"raw": s, "score": pct(s), "n": self.task_counts[t]}
                for t, s in self.task_scores.items()
            },
            "dimensions": {d: {"raw": s, "score": pct(s)} for d, s in self.dimension_scores.items()},
            "overall": {"raw": self.overall, "score": pct(self.overall)},
            "missing_tasks": list(self.missing_tasks),
        }


def aggregate(records: Iterable[ScoreRecord], tasks: Sequence[str] = TASKS) -> Aggregate:
    """Macro-average: per-task means, then unweighted means of task scores."""
    by_task: dict[str, list[float]] = defaultdict(list)
    for r in records:
        by_task[r.task].append(r.raw_score)
    task_scores = {t: math.fsum(by_task[t]) / len(by_task[t]) for t in tasks if by_task.get(t)}
    extra = sorted(set(by_task) - set(tasks))
    for t in extra:
        task_scores[t] = math.fsum(by_task[t]) / len(by_task[t])
    missing = [t for t in tasks if not by_task.get(t)]
    dims = {}
    for d, members in DIMENSIONS.items():
        vals = [task_scores[t] for t in members if t in task_scores]
        if vals:
            dims[d] = math.fsum(vals) / len(vals)
    overall = math.fsum(task_scores.values()) / len(task_scores) if task_scores else 0.0
    return Aggregate(
        task_scores=task_scores,
        dimension_scores=dims,
        overall=overall,
        task_counts={t: len(by_task[t]) for t in task_scores},
        missing_tasks=missing,
    )
