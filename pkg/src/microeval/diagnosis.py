"""Rule-based error labels for single-target grounding, and rank statistics.

Labels are assigned in a fixed priority order so exactly one applies:

=====  ==========================================================
IF     no usable box (parse failure or empty reply)
SUCC   IoU with the target reaches the success threshold
RH     the box center lies outside the referenced semantic region
OH     the box touches no annotated object at all
CATH   the best-overlapping object has a different category
CTXH   right category, but the object fails the referring condition
CS     the best-overlapping object is the target, localized loosely
OTHER  anything else
=====  ==========================================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .geometry import GeomBox, RectRegion, center, intersection_area, iou
from .parsing import AnswerKind, ParsedAnswer

SUCCESS_IOU = 0.3


class DiagnosisLabel(str, Enum):
    SUCC = "SUCC"
    IF = "IF"
    RH = "RH"
    OH = "OH"
    CATH = "CatH"
    CTXH = "CtxH"
    CS = "CS"
    OTHER = "OTHER"


LABEL_ORDER = tuple(DiagnosisLabel)


class UndefinedCorrelation(ValueError):
    """Correlation is undefined (constant input)."""


@dataclass(frozen=True)
class AnnotatedObject:
    id: int
    category: str
    box: GeomBox


@dataclass(frozen=True)
class DiagnosisContext:
    gt_id: int
    gt_category: str
    objects: tuple[AnnotatedObject, ...]
    referring_ids: frozenset[int]
    semantic_region: RectRegion | None = None

    def __post_init__(self) -> None:
        if not any(o.id == self.gt_id for o in self.objects):
            raise ValueError("the target object must be among the annotated objects")

    @property
    def gt_box(self) -> GeomBox:
        return next(o.box for o in self.objects if o.id == self.gt_id)

    @classmethod
    def from_meta(cls, meta: dict) -> DiagnosisContext:
        """Build from sample metadata as written by the task generator."""
        objects = tuple(
            AnnotatedObject(int(o["id"]), o["category"], GeomBox.from_coords(o["box"])) for o in meta["objects"]
        )
        gt_id = int(meta["target_ids"][0])
        gt_cat = next(o.category for o in objects if o.id == gt_id)
        region = meta.get("semantic_region")
        return cls(
            gt_id=gt_id,
            gt_category=gt_cat,
            objects=objects,
            referring_ids=frozenset(int(i) for i in meta.get("referring_ids", [gt_id])),
            semantic_region=RectRegion(*region) if region is not None else None,
        )


@dataclass(frozen=True)
class Diagnosis:
    label: DiagnosisLabel
    iou: float
    best_object_id: int | None

    def to_dict(self) -> dict:
        return {"label": self.label.value, "iou": self.iou, "best_overlap_object_id": self.best_object_id}


def _pick_box(prediction: ParsedAnswer | GeomBox | None, gt: GeomBox) -> GeomBox | None:
    if prediction is None:
        return None
    if isinstance(prediction, GeomBox):
        return prediction
    if prediction.kind is not AnswerKind.BOXES or not prediction.boxes:
        return None
    # several boxes for a single target: judge the one closest to being right
    best, best_iou = None, -1.0
    for b in prediction.boxes:
        v = iou(gt, b)
        if v > best_iou:
            best, best_iou = b, v
    return best


def classify(
    prediction: ParsedAnswer | GeomBox | None, ctx: DiagnosisContext, success_iou: float = SUCCESS_IOU
) -> Diagnosis:
    gt = ctx.gt_box
    box = _pick_box(prediction, gt)
    if box is None:
        return Diagnosis(DiagnosisLabel.IF, 0.0, None)
    gt_iou = iou(gt, box)
    if gt_iou >= success_iou:
        return Diagnosis(DiagnosisLabel.SUCC, gt_iou, ctx.gt_id)
    if ctx.semantic_region is not None and not ctx.semantic_region.contains_point(*center(box)):
        return Diagnosis(DiagnosisLabel.RH, gt_iou, None)
    touching = [o for o in ctx.objects if intersection_area(box, o.box) > 0]
    if not touching:
        return Diagnosis(DiagnosisLabel.OH, gt_iou, None)
    best = min(touching, key=lambda o: (-iou(box, o.box), o.id))
    if best.category != ctx.gt_category:
        return Diagnosis(DiagnosisLabel.CATH, gt_iou, best.id)
    if best.id != ctx.gt_id and best.id not in ctx.referring_ids:
        return Diagnosis(DiagnosisLabel.CTXH, gt_iou, best.id)
    if best.id == ctx.gt_id and 0 < gt_iou < success_iou:
        return Diagnosis(DiagnosisLabel.CS, gt_iou, best.id)
    return Diagnosis(DiagnosisLabel.OTHER, gt_iou, best.id)


def diagnosis_histogram(labels: Iterable[DiagnosisLabel | str]) -> dict[str, dict[str, float]]:
    """Count and percentage per label, in the fixed label order."""
    counts = {lab.value: 0 for lab in LABEL_ORDER}
    total = 0
    for lab in labels:
        counts[DiagnosisLabel(lab).value] += 1
        total += 1
    if total == 0:
        raise ValueError("histogram needs at least one label")
    return {k: {"count": n, "percent": 100.0 * n / total} for k, n in counts.items()}


def _validate(x: Sequence[float], y: Sequence[float]) -> tuple[list[float], list[float]]:
    xs, ys = [float(v) for v in x], [float(v) for v in y]
    if len(xs) != len(ys):
        raise ValueError("inputs must have equal length")
    if len(xs) < 2:
        raise ValueError("need at least two observations")
    if not all(math.isfinite(v) for v in xs + ys):
        raise ValueError("inputs must be finite")
    return xs, ys


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    xs, ys = _validate(x, y)
    n = len(xs)
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    dx = [v - mx for v in xs]
    dy = [v - my for v in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelation("correlation is undefined for constant input")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    xs, ys = _validate(x, y)
    return pearson(average_ranks(xs), average_ranks(ys))


def target_size(boxes: Sequence[GeomBox]) -> float:
    """Side length of a target: square root of its area (mean over several targets)."""
    if not boxes:
        raise ValueError("no target boxes")
    return math.fsum(math.sqrt(b.area) for b in boxes) / len(boxes)
