"""Coordinate conventions and ROI window arithmetic.

Three model-facing conventions are supported: ``thousand`` (both axes span
0..1000), ``unit`` (0..1) and ``abs`` (pixels). Conversions into pixels round
to nearest with ties away from zero and clamp to the canvas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .geometry import RectRegion

DEFAULT_SIDE = 1024
DEFAULT_SUPPRESS_IOU = 0.5


class CoordinateError(ValueError):
    """Value cannot be interpreted in the requested convention (parse-invalid)."""


class Convention(str, Enum):
    THOUSAND = "thousand"
    UNIT = "unit"
    ABS = "abs"

    @property
    def scale(self) -> float | None:
        return {Convention.THOUSAND: 1000.0, Convention.UNIT: 1.0}.get(self)


@dataclass(frozen=True)
class CoordFrame:
    convention: Convention
    width: int
    height: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "convention", Convention(self.convention))
        if self.width < 1 or self.height < 1:
            raise ValueError(f"canvas must be at least 1x1, got {self.width}x{self.height}")


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def _check(values: Iterable[float]) -> list[float]:
    out = []
    for v in values:
        v = float(v)
        if not math.isfinite(v) or v < 0:
            raise CoordinateError(f"coordinate {v!r} is negative or non-finite")
        out.append(v)
    return out


def to_abs(values: Sequence[float], frame: CoordFrame) -> list[float]:
    """Convert interleaved ``x, y, x, y, ...`` values into canvas pixels."""
    vals = _check(values)
    scale = frame.convention.scale
    out: list[float] = []
    for i, v in enumerate(vals):
        extent = frame.width if i % 2 == 0 else frame.height
        px = v if scale is None else round_half_away(v / scale * extent)
        out.append(min(max(px, 0), extent))
    return out


def from_abs(values: Sequence[float], frame: CoordFrame) -> list[float]:
    """Express pixel values in ``frame``'s convention (no rounding)."""
    scale = frame.convention.scale
    if scale is None:
        return [float(v) for v in values]
    return [
        float(v) / (frame.width if i % 2 == 0 else frame.height) * scale
        for i, v in enumerate(values)
    ]


@dataclass(frozen=True)
class RoiWindow:
    """Square crop window; ``valid_w``/``valid_h`` is the unpadded content."""

    x0: int
    y0: int
    side: int = DEFAULT_SIDE
    valid_w: int = DEFAULT_SIDE
    valid_h: int = DEFAULT_SIDE

    def __post_init__(self) -> None:
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError("window origin must be non-negative")
        if not (0 < self.valid_w <= self.side and 0 < self.valid_h <= self.side):
            raise ValueError(f"invalid window content {self.valid_w}x{self.valid_h} for side {self.side}")

    @property
    def rect(self) -> RectRegion:
        return RectRegion(self.x0, self.y0, self.x0 + self.valid_w, self.y0 + self.valid_h)

    def to_dict(self) -> dict[str, int]:
        return {"x0": self.x0, "y0": self.y0, "side": self.side,
                "valid_w": self.valid_w, "valid_h": self.valid_h}

    @classmethod
    def from_dict(cls, d: dict) -> RoiWindow:
        return cls(d["x0"], d["y0"], d["side"], d["valid_w"], d["valid_h"])


def _span(c: float, side: int, extent: int) -> tuple[int, int]:
    lo = max(0, round_half_away(c - side / 2.0))
    hi = min(extent, round_half_away(c + side / 2.0))
    lo = min(lo, extent - 1)
    hi = max(hi, lo + 1)
    return lo, hi


def make_roi(anchor: tuple[float, float], side: int, width: int, height: int) -> RoiWindow:
    """Window of ``side`` centered at ``anchor``, clipped to the image (padding is implicit)."""
    ax, ay = anchor
    if not (0 <= ax <= width and 0 <= ay <= height):
        raise CoordinateError(f"anchor {anchor} outside {width}x{height} image")
    x0, x1 = _span(ax, side, width)
    y0, y1 = _span(ay, side, height)
    return RoiWindow(x0, y0, side, min(x1 - x0, side), min(y1 - y0, side))


def roi_from_region(region: RectRegion, side: int, width: int, height: int) -> RoiWindow:
    """ROI built directly from an explicit query region.

    The window is centered on the region; it grows beyond ``side`` only when
    the region itself is larger, so the whole region is always inspected.
    """
    r = region.clip(width, height)
    need = int(math.ceil(max(r.x2 - r.x1, r.y2 - r.y1)))
    cx, cy = (r.x1 + r.x2) / 2.0, (r.y1 + r.y2) / 2.0
    return make_roi((cx, cy), max(side, need), width, height)


def roi_local_to_full(
    values: Sequence[float], roi: RoiWindow, convention: Convention = Convention.THOUSAND
) -> list[float]:
    """Map ROI-local coordinates back to full-image pixels."""
    vals = _check(values)
    scale = convention.scale
    limit = scale if scale is not None else float(roi.side)
    out: list[float] = []
    for i, v in enumerate(vals):
        if v > limit:
            raise CoordinateError(f"local coordinate {v} exceeds {limit}")
        if i % 2 == 0:
            origin, valid = roi.x0, roi.valid_w
        else:
            origin, valid = roi.y0, roi.valid_h
        local_px = v if scale is None else round_half_away(v / scale * roi.side)
        out.append(origin + min(local_px, valid))
    return out


def full_to_roi_local(
    values: Sequence[float], roi: RoiWindow, convention: Convention = Convention.THOUSAND
) -> list[float]:
    """Inverse of :func:`roi_local_to_full` without rounding or clamping."""
    scale = convention.scale
    out = []
    for i, v in enumerate(values):
        origin = roi.x0 if i % 2 == 0 else roi.y0
        local = float(v) - origin
        out.append(local if scale is None else local / roi.side * scale)
    return out


def window_iou(a: RoiWindow, b: RoiWindow) -> float:
    ra, rb = a.rect, b.rect
    w = min(ra.x2, rb.x2) - max(ra.x1, rb.x1)
    h = min(ra.y2, rb.y2) - max(ra.y1, rb.y1)
    inter = w * h if w > 0 and h > 0 else 0.0
    union = a.valid_w * a.valid_h + b.valid_w * b.valid_h - inter
    return inter / union if union > 0 else 0.0


def suppress_overlaps(
    windows: Sequence[RoiWindow], iou_threshold: float = DEFAULT_SUPPRESS_IOU
) -> list[RoiWindow]:
    """Greedy in input order: drop windows overlapping a kept one above the threshold."""
    kept: list[RoiWindow] = []
    for w in windows:
        if all(window_iou(w, k) <= iou_threshold for k in kept):
            kept.append(w)
    return kept


def clamp_anchor(x: float, y: float, width: int, height: int) -> tuple[float, float]:
    """Point anchors index pixels, so they clamp to ``[0, W-1] x [0, H-1]``."""
    return min(max(x, 0), width - 1), min(max(y, 0), height - 1)
