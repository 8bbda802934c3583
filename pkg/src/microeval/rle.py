"""Binary masks as COCO-style column-major run-length counts.

The first run always counts background pixels, scanning down each column and
then left to right. The compressed text form is byte-compatible with the
``counts`` strings written by ``pycocotools``.

Pixel ``(row r, col c)`` has its center at ``(c + 0.5, r + 0.5)``; centroids
and rasterization both use that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoxKind, GeomBox


class MaskError(ValueError):
    pass


class IncompatibleMaskError(MaskError):
    """Masks of different dimensions were compared."""


class EmptyMaskError(MaskError):
    """An operation needed foreground pixels but the mask has none."""


def _canonical(counts: list[int]) -> list[int]:
    out: list[int] = []
    merge = False  # an odd number of zero runs since the last emitted run
    for i, c in enumerate(counts):
        if c < 0:
            raise MaskError(f"negative run length {c}")
        if c == 0 and i > 0:
            merge = not merge
            continue
        if merge:
            out[-1] += c
            merge = False
        else:
            out.append(c)
    return out


@dataclass(frozen=True)
class RleMask:
    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise MaskError(f"mask dimensions must be >= 1, got {self.height}x{self.width}")
        counts = _canonical([int(c) for c in self.counts])
        if sum(counts) != self.height * self.width:
            raise MaskError(
                f"run lengths sum to {sum(counts)}, expected {self.height * self.width}"
            )
        object.__setattr__(self, "counts", tuple(counts))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])

    def to_array(self) -> np.ndarray:
        return rle_decode(self)

    def to_text(self) -> str:
        return rle_compress(self)

    @classmethod
    def from_text(cls, text: str, height: int, width: int) -> RleMask:
        return rle_decompress(text, height, width)


def rle_encode(mask: np.ndarray) -> RleMask:
    arr = np.asarray(mask).astype(bool)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise MaskError(f"expected a non-empty 2-D grid, got shape {arr.shape}")
    h, w = arr.shape
    flat = arr.ravel(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleMask(h, w, tuple(runs))


def rle_decode(m: RleMask) -> np.ndarray:
    values = np.zeros(len(m.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, m.counts)
    return flat.reshape((m.width, m.height)).T


_MAX_GROUPS = 12  # 60 bits: far beyond any mask size


def rle_compress(m: RleMask) -> str:
    """COCO ``rleToString``: zig-zag-free signed 5-bit groups, offset by 48."""
    counts = np.asarray(m.counts, dtype=np.int64)
    x = counts.copy()
    # the reference codec deltas against i-2 only from the fourth run on
    x[3:] -= counts[1:-2]
    # groups needed so that the value is the sign extension of its top group
    groups = np.ones(x.shape, dtype=np.int64)
    for k in range(1, _MAX_GROUPS + 1):
        half = 1 << (5 * k - 1)
        groups[(x < -half) | (x >= half)] = k + 1
    width = int(groups.max()) if x.size else 1
    shifts = 5 * np.arange(width, dtype=np.int64)
    chunks = (x[:, None] >> shifts[None, :]) & 0x1F
    cont = np.arange(width)[None, :] < (groups[:, None] - 1)
    chunks = np.where(cont, chunks | 0x20, chunks) + 48
    keep = np.arange(width)[None, :] < groups[:, None]
    return chunks[keep].astype(np.uint8).tobytes().decode("ascii")


def rle_decompress(text: str, height: int, width: int) -> RleMask:
    try:
        raw = np.frombuffer(text.encode("ascii"), dtype=np.uint8).astype(np.int64)
    except UnicodeEncodeError as exc:
        raise MaskError(f"invalid RLE character {text[exc.start]!r}") from exc
    codes = raw - 48
    bad = np.flatnonzero((codes < 0) | (codes > 63))
    if bad.size:
        raise MaskError(f"invalid RLE character {text[bad[0]]!r}")
    if codes.size == 0:
        return RleMask(height, width, ())
    last = (codes & 0x20) == 0
    if not last[-1]:
        raise MaskError("truncated RLE text")
    ends = np.flatnonzero(last)
    starts = np.concatenate(([0], ends[:-1] + 1))
    lengths = ends - starts + 1
    if lengths.max() > _MAX_GROUPS:
        raise MaskError("RLE value out of range")
    group = np.repeat(np.arange(ends.size), lengths)
    k = np.arange(codes.size) - starts[group]
    x = np.zeros(ends.size, dtype=np.int64)
    np.add.at(x, group, (codes & 0x1F) << (5 * k))
    negative = (codes[ends] & 0x10) != 0
    x[negative] -= np.left_shift(1, 5 * lengths[negative])
    counts = x.copy()
    # undo the deltas: runs 2, 4, 6... and 1, 3, 5... are running sums
    counts[2::2] = np.cumsum(x[2::2])
    counts[1::2] = np.cumsum(x[1::2])
    return RleMask(height, width, tuple(counts.tolist()))


def _check_same_shape(a: RleMask, b: RleMask) -> None:
    if a.shape != b.shape:
        raise IncompatibleMaskError(f"mask shapes differ: {a.shape} vs {b.shape}")


def mask_iou(a: RleMask, b: RleMask) -> float:
    _check_same_shape(a, b)
    if a.counts == b.counts:
        return 1.0 if a.area else 0.0
    x = rle_decode(a)
    y = rle_decode(b)
    union = int(np.count_nonzero(x | y))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(x & y)) / union


def mask_centroid(m: RleMask) -> tuple[float, float]:
    """Mean ``(x, y)`` of foreground pixel centers."""
    rows, cols = np.nonzero(rle_decode(m))
    if rows.size == 0:
        raise EmptyMaskError("centroid of an empty mask")
    return float(cols.mean()) + 0.5, float(rows.mean()) + 0.5


def mask_bounds(m: RleMask) -> tuple[int, int, int, int]:
    """Tight pixel-edge bounds ``(x1, y1, x2, y2)`` of the foreground."""
    rows, cols = np.nonzero(rle_decode(m))
    if rows.size == 0:
        raise EmptyMaskError("bounds of an empty mask")
    return int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1


def mask_bbox_diagonal(m: RleMask) -> float:
    x1, y1, x2, y2 = mask_bounds(m)
    return math.hypot(x2 - x1, y2 - y1)


def rasterize_box(box: GeomBox, height: int, width: int) -> np.ndarray:
    """Boolean grid of pixels whose centers fall inside ``box`` (edges inclusive)."""
    grid = np.zeros((height, width), dtype=bool)
    bx1, by1, bx2, by2 = box.bounds()
    c0 = max(0, int(math.floor(bx1 - 0.5)))
    c1 = min(width, int(math.ceil(bx2 + 0.5)))
    r0 = max(0, int(math.floor(by1 - 0.5)))
    r1 = min(height, int(math.ceil(by2 + 0.5)))
    if c0 >= c1 or r0 >= r1:
        return grid
    xs = np.arange(c0, c1) + 0.5
    ys = np.arange(r0, r1) + 0.5
    px, py = np.meshgrid(xs, ys)
    if box.kind is BoxKind.HBB:
        inside = (px >= bx1) & (px <= bx2) & (py >= by1) & (py <= by2)
    else:
        verts = box.vertices()
        signed = 0.0
        for i in range(4):
            (x1, y1), (x2, y2) = verts[i], verts[(i + 1) % 4]
            signed += x1 * y2 - x2 * y1
        sign = 1.0 if signed > 0 else -1.0
        inside = np.ones_like(px, dtype=bool)
        for i in range(4):
            (x1, y1), (x2, y2) = verts[i], verts[(i + 1) % 4]
            cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
            inside &= sign * cross >= -1e-9
    grid[r0:r1, c0:c1] = inside
    return grid


def box_fill_mask(box: GeomBox, height: int, width: int) -> RleMask:
    """Mask whose foreground is the rasterized interior of ``box``."""
    grid = rasterize_box(box, height, width)
    if not grid.any():
        raise EmptyMaskError(f"box {box.to_list()} covers no pixel of a {height}x{width} image")
    return rle_encode(grid)
