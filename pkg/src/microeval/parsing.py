"""Turn free-form model text into canonical answers.

Every public parser is total: arbitrary input yields a :class:`ParsedAnswer`,
never an exception. Ambiguity is resolved strictest-first: the content after
the last ``Final answer:`` line is tried before the whole text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .geometry import BoxKind, GeomBox, InvalidGeometry


class AnswerKind(str, Enum):
    BOXES = "boxes"
    COUNT = "count"
    OPTION = "option"
    NULL = "null"
    INVALID = "invalid"


class BoxFormat(str, Enum):
    HBB = "hbb"
    OBB = "obb"
    EITHER = "either"


@dataclass(frozen=True)
class ParsedAnswer:
    kind: AnswerKind
    boxes: tuple[GeomBox, ...] | None = None
    count: int | None = None
    option: str | None = None
    invalid_reason: str | None = None

    def __post_init__(self) -> None:
        payloads = {
            AnswerKind.BOXES: self.boxes is not None,
            AnswerKind.COUNT: self.count is not None,
            AnswerKind.OPTION: self.option is not None,
        }
        for kind, present in payloads.items():
            if present != (self.kind is kind):
                raise ValueError(f"payload does not match kind {self.kind}")
        if (self.kind is AnswerKind.INVALID) != (self.invalid_reason is not None):
            raise ValueError("INVALID answers (and only those) carry a reason")

    @classmethod
    def invalid(cls, reason: str) -> ParsedAnswer:
        return cls(AnswerKind.INVALID, invalid_reason=reason)

    @classmethod
    def null(cls) -> ParsedAnswer:
        return cls(AnswerKind.NULL)

    @classmethod
    def of_boxes(cls, boxes: Iterable[GeomBox]) -> ParsedAnswer:
        return cls(AnswerKind.BOXES, boxes=tuple(boxes))

    @classmethod
    def of_count(cls, n: int) -> ParsedAnswer:
        return cls(AnswerKind.COUNT, count=int(n))

    @classmethod
    def of_option(cls, label: str) -> ParsedAnswer:
        return cls(AnswerKind.OPTION, option=label)

    @property
    def ok(self) -> bool:
        return self.kind not in (AnswerKind.INVALID, AnswerKind.NULL)

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.boxes is not None:
            d["boxes"] = [b.to_list() for b in self.boxes]
        if self.count is not None:
            d["count"] = self.count
        if self.option is not None:
            d["option"] = self.option
        if self.invalid_reason is not None:
            d["invalid_reason"] = self.invalid_reason
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ParsedAnswer:
        kind = AnswerKind(d["kind"])
        boxes = d.get("boxes")
        return cls(
            kind,
            boxes=tuple(GeomBox.from_coords(b) for b in boxes) if boxes is not None else None,
            count=d.get("count"),
            option=d.get("option"),
            invalid_reason=d.get("invalid_reason"),
        )


_FINAL_RE = re.compile(r"^[ \t*#>_-]*final answer[ \t*_]*:", re.IGNORECASE | re.MULTILINE)
_NUMBER = r"[+-]?\d+(?:\.\d+)?"
_NUMBER_RE = re.compile(rf"^\s*({_NUMBER})\s*$")
_GROUP_RE = re.compile(r"\[([^\[\]]*)\]")
_COUNT_RE = re.compile(r"(?<![\w.])([+-]?)(\d+)(\.\d+)?(?![\w])")


def extract_final_segment(text: str) -> str:
    """Content after the last ``Final answer:`` marker, else the whole text."""
    matches = list(_FINAL_RE.finditer(text))
    if not matches:
        return text
    return text[matches[-1].end():].strip()


def _segments(text: str) -> list[str]:
    final = extract_final_segment(text)
    return [final, text] if final is not text else [text]


def _numeric_groups(text: str) -> list[list[float] | None]:
    """Innermost ``[...]`` groups; ``None`` marks a group with a non-numeric entry."""
    groups: list[list[float] | None] = []
    for m in _GROUP_RE.finditer(text):
        body = m.group(1).strip()
        if not body:
            groups.append(None)
            continue
        parts = re.split(r"\s*,\s*|\s+", body)
        values = []
        for p in parts:
            nm = _NUMBER_RE.match(p)
            if nm is None:
                values = None
                break
            values.append(float(nm.group(1)))
        groups.append(values)
    return groups


def _boxes_from(text: str, expected: BoxFormat) -> tuple[list[GeomBox], bool]:
    boxes: list[GeomBox] = []
    wrong_family = False
    for values in _numeric_groups(text):
        if values is None or len(values) not in (4, 8):
            continue
        kind = BoxKind.HBB if len(values) == 4 else BoxKind.OBB
        if expected is not BoxFormat.EITHER and kind.value != expected.value:
            wrong_family = True
            continue
        try:
            boxes.append(GeomBox(kind, tuple(values)))
        except InvalidGeometry:
            continue
    return boxes, wrong_family


def parse_boxes(text: str, expected: BoxFormat = BoxFormat.EITHER, multi: bool = True) -> ParsedAnswer:
    """Extract every valid 4- or 8-coordinate box.

    Misordered or degenerate boxes are dropped rather than repaired. In both
    single- and multi-target mode the full valid list is returned; for
    single-target tasks the scorer keeps the best box and ignores the rest.
    """
    expected = BoxFormat(expected)
    wrong_family = False
    for segment in _segments(str(text)):
        boxes, wrong = _boxes_from(segment, expected)
        wrong_family |= wrong
        if boxes:
            return ParsedAnswer.of_boxes(boxes)
    if wrong_family:
        return ParsedAnswer.invalid("wrong format")
    return ParsedAnswer.invalid("no valid box")


def render_boxes(boxes: Sequence[GeomBox]) -> str:
    return "[" + ", ".join("[" + ", ".join(_fmt(v) for v in b.coords) + "]" for b in boxes) + "]"


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def parse_count(text: str) -> ParsedAnswer:
    """Single non-negative integer; repeated identical values are not a conflict."""
    for segment in _segments(str(text)):
        found = _COUNT_RE.findall(segment)
        if not found:
            continue
        values = {(sign == "-", digits.lstrip("0") or "0", frac) for sign, digits, frac in found}
        distinct = {(neg, d) for neg, d, _ in values}
        if len(distinct) > 1:
            return ParsedAnswer.invalid("conflicting numbers")
        neg, digits = next(iter(distinct))
        if any(frac for _, _, frac in values):
            return ParsedAnswer.invalid("non-integer count")
        if neg and digits != "0":
            return ParsedAnswer.invalid("negative count")
        if len(digits) > 18:
            return ParsedAnswer.invalid("count out of range")
        return ParsedAnswer.of_count(int(digits))
    return ParsedAnswer.invalid("no count")


_DECOR = " \t\r\n.:;,!?()[]{}<>\"'`*_"
_LEAD_RE = re.compile(r"^(?:final answer|the answer is|answer|option|choice)\s*[:\-]?\s*", re.IGNORECASE)
_CUE_RE = re.compile(
    r"\b(?:answer(?:\s+is)?|option|choice)\s*[:\-]?\s*\(?\b([A-Za-z])\b\)?", re.IGNORECASE
)
_CAPITAL_RE = re.compile(r"(?<![A-Za-z])([A-Z])(?![A-Za-z])")


def parse_option(text: str, valid_labels: Iterable[str]) -> ParsedAnswer:
    """Map a reply to exactly one label from ``valid_labels``."""
    labels = {label.upper() for label in valid_labels}
    if not labels:
        return ParsedAnswer.invalid("no option labels configured")
    for segment in _segments(str(text)):
        bare = segment.strip(_DECOR)
        while True:
            stripped = _LEAD_RE.sub("", bare).strip(_DECOR)
            if stripped == bare:
                break
            bare = stripped
        if len(bare) == 1 and bare.upper() in labels:
            return ParsedAnswer.of_option(bare.upper())
        cued = {m.upper() for m in _CUE_RE.findall(segment)} & labels
        if len(cued) == 1:
            return ParsedAnswer.of_option(cued.pop())
        if len(cued) > 1:
            return ParsedAnswer.invalid("conflicting options")
        caps = set(_CAPITAL_RE.findall(segment)) & labels
        if len(caps) == 1:
            return ParsedAnswer.of_option(caps.pop())
        if len(caps) > 1:
            return ParsedAnswer.invalid("conflicting options")
    return ParsedAnswer.invalid("no option")


def parse_points(text: str, budget: int | None = None) -> list[tuple[float, float]]:
    points: list[tuple[float, float]] = []
    for values in _numeric_groups(str(text)):
        if values is None or len(values) != 2:
            continue
        points.append((values[0], values[1]))
        if budget is not None and len(points) >= budget:
            break
    return points


def is_null_reply(text: str) -> bool:
    return extract_final_segment(str(text)).strip(_DECOR).lower() == "null"


@dataclass(frozen=True)
class AnswerSpec:
    """What a task expects back from the model."""

    kind: str  # "boxes", "count" or "option"
    box_format: BoxFormat = BoxFormat.EITHER
    multi: bool = True
    labels: tuple[str, ...] = field(default_factory=tuple)


def parse_answer(text: str, spec: AnswerSpec) -> ParsedAnswer:
    if spec.kind == "boxes":
        return parse_boxes(text, spec.box_format, spec.multi)
    if spec.kind == "count":
        return parse_count(text)
    if spec.kind == "option":
        return parse_option(text, spec.labels)
    return ParsedAnswer.invalid(f"unknown answer kind {spec.kind}")


def parse_local_answer(text: str, spec: AnswerSpec) -> ParsedAnswer:
    """Local inspection replies may say ``null`` when the target is not visible."""
    if is_null_reply(text):
        return ParsedAnswer.null()
    return parse_answer(text, spec)
