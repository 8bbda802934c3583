"""Three-stage perception agent: ROI discovery, local inspection, synthesis.

Call accounting is exact: a run makes one discovery call (skipped when the
query carries an explicit region), one inspection call per ROI and one
synthesis call, and :func:`run_map` checks the tally against that formula.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from ..coords import (
    DEFAULT_SIDE,
    DEFAULT_SUPPRESS_IOU,
    Convention,
    CoordFrame,
    CoordinateError,
    RoiWindow,
    _check,
    clamp_anchor,
    make_roi,
    roi_from_region,
    roi_local_to_full,
    round_half_away,
    suppress_overlaps,
)
from ..dataset import REGION_TASKS, Sample
from ..geometry import GeomBox, InvalidGeometry
from ..imaging import ImageCanvas, crop, draw_outline
from ..parsing import AnswerKind, ParsedAnswer, parse_answer, parse_local_answer, parse_points
from ..metrics import TASKS
from . import prompts
from .backends import (
    BackendRequest,
    BoxFillSegmenter,
    Decoding,
    ModelBackend,
    Segmenter,
    TransportError,
    derived,
    fingerprint,
)

log = logging.getLogger(__name__)

ROI_OUTLINE = (255, 255, 0)
MAX_DISCOVERY_POINTS = 64


class ConfigError(ValueError):
    """Invalid run configuration; raised before any backend call."""


class PolicyMode(str, Enum):
    TASK_ADAPTIVE = "task-adaptive"
    UNIFORM_1 = "uniform-1"
    UNIFORM_2 = "uniform-2"
    UNIFORM_4 = "uniform-4"


DEFAULT_BUDGETS: dict[str, int] = {t: 1 for t in TASKS}
DEFAULT_BUDGETS.update({"GD": 4, "MCR": 4, "RS": 2, "CS": 2, "RD": 0, "RC": 0})


@dataclass(frozen=True)
class RoiBudgetPolicy:
    mode: PolicyMode = PolicyMode.TASK_ADAPTIVE
    budgets: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_BUDGETS))

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", PolicyMode(self.mode))
        for task, k in self.budgets.items():
            if k < 0:
                raise ConfigError(f"negative ROI budget for {task}")
            if k == 0 and task not in REGION_TASKS:
                raise ConfigError(f"task {task} needs discovery, so its budget must be >= 1")

    @classmethod
    def parse(cls, text: str) -> RoiBudgetPolicy:
        try:
            return cls(PolicyMode(text.strip().lower().replace("_", "-")))
        except ValueError as exc:
            raise ConfigError(f"unknown ROI policy {text!r}") from exc

    def budget(self, task: str) -> int:
        """ROIs to discover; 0 means the ROI comes straight from the query region."""
        if task in REGION_TASKS:
            return 0
        if self.mode is PolicyMode.TASK_ADAPTIVE:
            return self.budgets.get(task, 1)
        return int(self.mode.value.split("-")[1])


@dataclass(frozen=True)
class MapConfig:
    side: int = DEFAULT_SIDE
    policy: RoiBudgetPolicy = field(default_factory=RoiBudgetPolicy)
    protocol: Convention = Convention.THOUSAND
    suppress_iou: float = DEFAULT_SUPPRESS_IOU
    decoding: Decoding = field(default_factory=Decoding)

    def __post_init__(self) -> None:
        object.__setattr__(self, "protocol", Convention(self.protocol))
        if self.side < 16:
            raise ConfigError("crop side must be at least 16 pixels")


@dataclass(frozen=True)
class View:
    """What part of the canvas a model saw, and how its pixels map back.

    A full-image pixel is ``x0 + local * sx``; results are clamped to the
    ``valid_w`` x ``valid_h`` content (in full-image pixels).
    """

    width: int
    height: int
    x0: int = 0
    y0: int = 0
    sx: float = 1.0
    sy: float = 1.0
    valid_w: float | None = None
    valid_h: float | None = None

    @classmethod
    def full(cls, width: int, height: int) -> View:
        return cls(width, height)

    @classmethod
    def of_roi(cls, roi: RoiWindow) -> View:
        return cls(roi.side, roi.side, roi.x0, roi.y0, 1.0, 1.0, roi.valid_w, roi.valid_h)

    @classmethod
    def resized(cls, width: int, height: int, new_w: int, new_h: int) -> View:
        return cls(new_w, new_h, 0, 0, width / new_w, height / new_h, width, height)

    def frame(self, convention: Convention) -> CoordFrame:
        return CoordFrame(convention, self.width, self.height)

    def to_meta(self) -> dict:
        return {"width": self.width, "height": self.height, "x0": self.x0, "y0": self.y0,
                "sx": self.sx, "sy": self.sy,
                "valid_w": self.valid_w if self.valid_w is not None else self.width * self.sx,
                "valid_h": self.valid_h if self.valid_h is not None else self.height * self.sy}

    def to_full(self, values: Sequence[float], convention: Convention) -> list[float]:
        vals = _check(values)
        scale = convention.scale
        meta = self.to_meta()
        out = []
        for i, v in enumerate(vals):
            ext, s, origin, valid = ((self.width, self.sx, self.x0, meta["valid_w"]) if i % 2 == 0
                                     else (self.height, self.sy, self.y0, meta["valid_h"]))
            limit = scale if scale is not None else ext
            if v > limit:
                raise CoordinateError(f"coordinate {v} exceeds {limit}")
            local = v / scale * ext if scale is not None else v
            out.append(origin + min(round_half_away(local * s), valid))
        return out


def boxes_to_full(
    answer: ParsedAnswer, view: View, convention: Convention, roi: RoiWindow | None = None
) -> ParsedAnswer:
    """Map a parsed box answer from the view's convention into full-image pixels.

    Boxes whose coordinates leave the view or collapse after rounding are
    dropped; if none survive the answer becomes INVALID.
    """
    if answer.kind is not AnswerKind.BOXES:
        return answer
    out = []
    for b in answer.boxes:
        try:
            coords = (roi_local_to_full(b.coords, roi, convention) if roi is not None
                      else view.to_full(b.coords, convention))
            out.append(GeomBox(b.kind, tuple(coords)))
        except (CoordinateError, InvalidGeometry):
            continue
    if not out:
        return ParsedAnswer.invalid("no box survives conversion to image pixels")
    return ParsedAnswer.of_boxes(out)


class CallSession:
    """Issues requests for one sample and keeps the per-sample call log."""

    def __init__(self, backend: ModelBackend, sample: Sample, decoding: Decoding | None = None,
                 record_prompts: bool = True) -> None:
        self.backend = backend
        self.sample = sample
        self.decoding = decoding or Decoding()
        self.calls = 0
        self.log: list[dict] = []
        self.record_prompts = record_prompts

    def ask(self, images: Sequence[ImageCanvas], prompt: str, stage: str, meta: dict | None = None) -> str:
        request = BackendRequest(
            images=list(images), prompt=prompt, decoding=self.decoding, stage=stage,
            meta={"sample_id": self.sample.id, **(meta or {})},
        )
        self.calls += 1
        entry = {"sample_id": self.sample.id, "call": self.calls, "stage": stage,
                 "fingerprint": fingerprint(request)}
        if self.record_prompts:
            entry["prompt"] = prompt
        try:
            reply = self.backend.complete(request)
        except TransportError as exc:
            entry["error"] = str(exc)
            self.log.append(entry)
            raise
        entry["reply"] = reply
        self.log.append(entry)
        return reply


@dataclass
class EvidenceItem:
    roi: RoiWindow
    local_answer: ParsedAnswer
    remapped: list[GeomBox] | None
    summary: str

    def __post_init__(self) -> None:
        if (self.remapped is not None) != (self.local_answer.kind is AnswerKind.BOXES):
            raise ValueError("remapped boxes must be present exactly when the local answer has boxes")


@dataclass
class Prediction:
    """A strategy's final answer in full-image pixels plus bookkeeping."""

    answer: ParsedAnswer
    calls: int
    empty: bool = False
    error: str | None = None
    mask: str | None = None
    trace: dict = field(default_factory=dict)
    log: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"answer": self.answer.to_dict()}
        if self.mask is not None:
            d["mask"] = self.mask
        return d


def _convention(backend: ModelBackend, cfg: MapConfig) -> Convention:
    return backend.convention_override or cfg.protocol


def discover_rois(
    session: CallSession, image: ImageCanvas, sample: Sample, cfg: MapConfig, budget: int
) -> tuple[list[RoiWindow], bool]:
    """Ask for anchor points and turn them into at most ``budget`` windows.

    Returns the windows and whether the image-center fallback was used.
    """
    if budget < 1:
        raise ConfigError("discovery needs a budget of at least 1")
    conv = _convention(session.backend, cfg)
    w, h = image.width, image.height
    frame = CoordFrame(conv, w, h)
    reply = session.ask(
        [image], prompts.discovery_prompt(sample, frame, budget), "discover",
        {"budget": budget, "protocol": conv.value, "view": View.full(w, h).to_meta()},
    )
    view = View.full(w, h)
    windows = []
    for point in parse_points(reply, MAX_DISCOVERY_POINTS):
        try:
            px, py = view.to_full(point, conv)
        except CoordinateError:
            continue
        windows.append(make_roi(clamp_anchor(px, py, w, h), cfg.side, w, h))
    windows = suppress_overlaps(windows, cfg.suppress_iou)[:budget]
    if windows:
        return windows, False
    log.info("sample %s: no usable discovery point, using the image center", sample.id)
    return [make_roi((w / 2.0, h / 2.0), cfg.side, w, h)], True


def _summary(answer: ParsedAnswer, boxes: list[GeomBox] | None, frame: CoordFrame) -> str:
    if answer.kind is AnswerKind.NULL:
        return "target not visible"
    if answer.kind is AnswerKind.INVALID:
        return f"no usable answer ({answer.invalid_reason})"
    if boxes is not None:
        return f"{prompts.CANDIDATE_MARK} {prompts.fmt_boxes(boxes, frame)}"
    if answer.kind is AnswerKind.COUNT:
        return f"local count {answer.count}"
    return f"local choice {answer.option}"


def inspect_roi(
    session: CallSession, image: ImageCanvas, sample: Sample, roi: RoiWindow, cfg: MapConfig,
    stage: str = "inspect",
) -> EvidenceItem:
    conv = _convention(session.backend, cfg)
    patch = derived(crop(image, roi), image, f"crop {roi.to_dict()}")
    local = CoordFrame(conv, roi.side, roi.side)
    full = CoordFrame(conv, image.width, image.height)
    reply = session.ask(
        [patch], prompts.inspection_prompt(sample, full, local), stage,
        {"roi": roi.to_dict(), "protocol": conv.value, "view": View.of_roi(roi).to_meta()},
    )
    answer = parse_local_answer(reply, sample.answer_spec())
    answer = boxes_to_full(answer, View.of_roi(roi), conv, roi=roi)
    remapped = list(answer.boxes) if answer.kind is AnswerKind.BOXES else None
    return EvidenceItem(roi, answer, remapped, _summary(answer, remapped, full))


def _outlined(image: ImageCanvas, rois: Sequence[RoiWindow]) -> ImageCanvas:
    pixels = image.pixels.copy()
    for roi in rois:
        r = roi.rect
        draw_outline(pixels, GeomBox.hbb(r.x1, r.y1, r.x2, r.y2), ROI_OUTLINE, 3)
    return derived(ImageCanvas(pixels), image, f"outline {[roi.to_dict() for roi in rois]}")


def synthesize(
    session: CallSession, image: ImageCanvas, sample: Sample, evidence: Sequence[EvidenceItem], cfg: MapConfig
) -> ParsedAnswer:
    conv = _convention(session.backend, cfg)
    frame = CoordFrame(conv, image.width, image.height)
    lines = [prompts.evidence_line(i, e.roi.rect.as_tuple(), e.summary, frame) for i, e in enumerate(evidence)]
    reply = session.ask(
        [_outlined(image, [e.roi for e in evidence])], prompts.synthesis_prompt(sample, frame, lines),
        "synthesize", {"protocol": conv.value, "view": View.full(image.width, image.height).to_meta()},
    )
    answer = parse_answer(reply, sample.answer_spec())
    return boxes_to_full(answer, View.full(image.width, image.height), conv)


def apply_segmenter(pred: Prediction, sample: Sample, image: ImageCanvas, segmenter: Segmenter | None) -> None:
    """For mask tasks, turn the predicted prompt box into a mask (in place)."""
    if sample.answer_format != "mask" or pred.answer.kind is not AnswerKind.BOXES:
        return
    pred.mask = (segmenter or BoxFillSegmenter()).segment(image, pred.answer.boxes[0])


def expected_calls(discovery: bool, rois: int) -> int:
    return int(discovery) + rois + 1


def run_map(
    backend: ModelBackend,
    sample: Sample,
    image: ImageCanvas,
    cfg: MapConfig | None = None,
    segmenter: Segmenter | None = None,
    record_prompts: bool = True,
) -> Prediction:
    cfg = cfg or MapConfig()
    session = CallSession(backend, sample, cfg.decoding, record_prompts)
    trace: dict = {"strategy": "map"}
    try:
        budget = cfg.policy.budget(sample.task)
        discovery = budget > 0 or sample.region is None
        if not discovery:
            rois = [roi_from_region(sample.region, cfg.side, image.width, image.height)]
        else:
            rois, fallback = discover_rois(session, image, sample, cfg, max(budget, 1))
            trace["discovery_fallback"] = fallback
        evidence = [inspect_roi(session, image, sample, roi, cfg) for roi in rois]
        trace["rois"] = [roi.to_dict() for roi in rois]
        trace["evidence"] = [e.summary for e in evidence]
        trace["all_null"] = all(e.local_answer.kind is AnswerKind.NULL for e in evidence)
        answer = synthesize(session, image, sample, evidence, cfg)
        want = expected_calls(discovery, len(rois))
        if session.calls != want:
            raise AssertionError(f"call accounting broken: {session.calls} != {want}")
        trace["k"] = len(rois)
        pred = Prediction(answer, session.calls, trace=trace, log=session.log)
        apply_segmenter(pred, sample, image, segmenter)
        return pred
    except TransportError as exc:
        return Prediction(ParsedAnswer.invalid("transport error"), session.calls, empty=True,
                          error=str(exc), trace=trace, log=session.log)


def mean_calls(preds: Sequence[Prediction]) -> float:
    return math.fsum(p.calls for p in preds) / len(preds) if preds else 0.0
