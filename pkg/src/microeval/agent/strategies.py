"""Single-pass baselines and the dispatcher over every perception strategy."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from ..coords import CoordFrame, roi_from_region
from ..dataset import Sample
from ..geometry import GeomBox, iou
from ..imaging import ImageCanvas, crop, oracle_crop, resize_long_edge, sliding_tiles
from ..parsing import AnswerKind, ParsedAnswer, parse_answer
from . import prompts
from .backends import ModelBackend, Segmenter, TransportError, derived
from .pipeline import (
    CallSession,
    ConfigError,
    EvidenceItem,
    MapConfig,
    Prediction,
    View,
    _convention,
    apply_segmenter,
    boxes_to_full,
    inspect_roi,
    run_map,
)

KINDS = ("map", "native", "resize", "query-crop", "oracle-crop", "sliding")
SIZED = {"resize", "oracle-crop", "sliding"}
MERGE_IOU = 0.5
_SPEC_RE = re.compile(r"^([a-z-]+?)(?:-(\d+))?$")


@dataclass(frozen=True)
class Strategy:
    kind: str = "map"
    size: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind in SIZED:
            if self.size is None:
                object.__setattr__(self, "size", 1024)
            if self.size < 16:
                raise ConfigError("strategy size must be at least 16 pixels")
        elif self.size is not None:
            raise ConfigError(f"strategy {self.kind} takes no size")

    @classmethod
    def parse(cls, text: str) -> Strategy:
        """``map``, ``native``, ``query-crop``, ``resize-1024``, ``sliding-512``, ``oracle-crop-2048``."""
        m = _SPEC_RE.match(text.strip().lower())
        if not m:
            raise ConfigError(f"cannot parse strategy {text!r}")
        kind, size = m.group(1), m.group(2)
        return cls(kind, int(size) if size else None)

    @property
    def is_oracle(self) -> bool:
        return self.kind == "oracle-crop"

    @property
    def label(self) -> str:
        return self.kind if self.size is None else f"{self.kind}-{self.size}"


def validate_strategy(strategy: Strategy, samples: Sequence[Sample], oracle_allowed: bool = False) -> None:
    """Reject unusable configurations before any backend call."""
    if strategy.is_oracle and not oracle_allowed:
        raise ConfigError("oracle-crop uses ground truth and must be enabled explicitly (--oracle)")
    if strategy.kind == "query-crop":
        missing = sorted({s.task for s in samples if s.region is None})
        if missing:
            raise ConfigError(f"query-crop needs an explicit region; tasks without one: {', '.join(missing)}")
    if strategy.is_oracle:
        missing = sorted({s.id for s in samples if not s.meta.get("evidence")})
        if missing:
            raise ConfigError(f"oracle-crop needs target evidence; missing for {len(missing)} samples")


def _direct(
    session: CallSession, sample: Sample, image: ImageCanvas, view: View, stage: str, cfg: MapConfig,
    full_w: int, full_h: int, what: str,
) -> ParsedAnswer:
    conv = _convention(session.backend, cfg)
    question = CoordFrame(conv, full_w, full_h)
    answer_frame = view.frame(conv)
    prompt = prompts.direct_prompt(sample, question, answer_frame if view.width != full_w or
                                   view.height != full_h or view.x0 or view.y0 else None, what)
    reply = session.ask([image], prompt, stage, {"protocol": conv.value, "view": view.to_meta()})
    return boxes_to_full(parse_answer(reply, sample.answer_spec()), view, conv)


def merge_tiles(sample: Sample, evidence: Sequence[EvidenceItem]) -> ParsedAnswer:
    """Programmatic merge of per-tile answers (no extra model call)."""
    kind = sample.answer_spec().kind
    if kind == "boxes":
        kept: list[GeomBox] = []
        for e in evidence:
            for b in e.remapped or ():
                if all(iou(b, k) <= MERGE_IOU for k in kept):
                    kept.append(b)
        return ParsedAnswer.of_boxes(kept) if kept else ParsedAnswer.invalid("no tile reported a box")
    if kind == "count":
        counts = [e.local_answer.count for e in evidence if e.local_answer.kind is AnswerKind.COUNT]
        if not counts and not any(e.local_answer.kind is AnswerKind.NULL for e in evidence):
            return ParsedAnswer.invalid("no tile reported a count")
        return ParsedAnswer.of_count(sum(counts))
    votes = Counter(e.local_answer.option for e in evidence if e.local_answer.kind is AnswerKind.OPTION)
    if not votes:
        return ParsedAnswer.invalid("no tile chose an option")
    best = max(votes.values())
    return ParsedAnswer.of_option(min(label for label, n in votes.items() if n == best))


def run_strategy(
    backend: ModelBackend,
    sample: Sample,
    image: ImageCanvas,
    strategy: Strategy,
    cfg: MapConfig | None = None,
    segmenter: Segmenter | None = None,
    record_prompts: bool = True,
) -> Prediction:
    cfg = cfg or MapConfig()
    if strategy.kind == "map":
        return run_map(backend, sample, image, cfg, segmenter, record_prompts)
    session = CallSession(backend, sample, cfg.decoding, record_prompts)
    w, h = image.width, image.height
    trace: dict = {"strategy": strategy.label}
    try:
        if strategy.kind == "native":
            answer = _direct(session, sample, image, View.full(w, h), "native", cfg, w, h, "the full image")
        elif strategy.kind == "resize":
            small = resize_long_edge(image, strategy.size)
            if small is not image:
                derived(small, image, f"resize {small.width}x{small.height}")
            view = View.resized(w, h, small.width, small.height)
            trace["resized"] = [small.width, small.height]
            answer = _direct(session, sample, small, view, "resize", cfg, w, h, "a downscaled copy")
        elif strategy.kind in ("query-crop", "oracle-crop"):
            if strategy.kind == "query-crop":
                if sample.region is None:
                    raise ConfigError(f"sample {sample.id} has no region for query-crop")
                roi = roi_from_region(sample.region, cfg.side, w, h)
            else:
                targets = [GeomBox.hbb(*b) for b in sample.meta.get("evidence", [])]
                roi = oracle_crop(targets, strategy.size, w, h)
                trace["oracle"] = True
            trace["rois"] = [roi.to_dict()]
            patch = derived(crop(image, roi), image, f"crop {roi.to_dict()}")
            answer = _direct(session, sample, patch, View.of_roi(roi), strategy.kind,
                             cfg, w, h, "a crop")
        else:
            tiles = sliding_tiles(w, h, strategy.size)
            evidence = [inspect_roi(session, image, sample, t, cfg, stage="tile") for t in tiles]
            trace["tiles"] = len(tiles)
            answer = merge_tiles(sample, evidence)
        pred = Prediction(answer, session.calls, trace=trace, log=session.log)
        apply_segmenter(pred, sample, image, segmenter)
        return pred
    except TransportError as exc:
        return Prediction(ParsedAnswer.invalid("transport error"), session.calls, empty=True,
                          error=str(exc), trace=trace, log=session.log)
