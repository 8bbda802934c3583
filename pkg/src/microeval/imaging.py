"""Image canvases plus the crops, resizes and tilings used by perception strategies."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .coords import RoiWindow, make_roi, round_half_away
from .geometry import BoxKind, GeomBox, center


@dataclass(frozen=True, eq=False)
class ImageCanvas:
    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ValueError(f"expected HxWx3 uint8 pixels, got {self.pixels.shape} {self.pixels.dtype}")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def blank(cls, width: int, height: int) -> ImageCanvas:
        return cls(np.zeros((height, width, 3), dtype=np.uint8))


def load_image(path: str | Path) -> ImageCanvas:
    with Image.open(path) as im:
        return ImageCanvas(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())


def save_image(canvas: ImageCanvas, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas.pixels).save(path, format="PNG", compress_level=3)


def encode_png(canvas: ImageCanvas) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(canvas.pixels).save(buf, format="PNG", compress_level=3)
    return buf.getvalue()


class ImageCache:
    """Memoizes decoded images; safe for concurrent readers."""

    def __init__(self, root: str | Path = ".", max_items: int = 16) -> None:
        self.root = Path(root)
        self.max_items = max_items
        self._items: dict[str, ImageCanvas] = {}
        self._lock = threading.Lock()

    def get(self, ref: str) -> ImageCanvas:
        with self._lock:
            hit = self._items.get(ref)
            if hit is not None:
                self._items[ref] = self._items.pop(ref)
                return hit
        canvas = load_image(self.root / ref)
        with self._lock:
            self._items[ref] = canvas
            while len(self._items) > self.max_items:
                self._items.pop(next(iter(self._items)))
        return canvas


def crop(image: ImageCanvas, window: RoiWindow) -> ImageCanvas:
    """``side x side`` copy of the window; right/bottom beyond the image is zero."""
    out = np.zeros((window.side, window.side, 3), dtype=np.uint8)
    w = min(window.valid_w, image.width - window.x0)
    h = min(window.valid_h, image.height - window.y0)
    out[:h, :w] = image.pixels[window.y0:window.y0 + h, window.x0:window.x0 + w]
    return ImageCanvas(out)


def resized_dims(width: int, height: int, target: int) -> tuple[int, int]:
    long_edge = max(width, height)
    if target >= long_edge:
        return width, height
    if width >= height:
        return target, max(1, round_half_away(height * target / width))
    return max(1, round_half_away(width * target / height)), target


def resize_long_edge(image: ImageCanvas, target: int) -> ImageCanvas:
    """Area-averaged downscale so the long edge equals ``target``; never upscales."""
    if target < 1:
        raise ValueError("target must be >= 1")
    w, h = resized_dims(image.width, image.height, target)
    if (w, h) == (image.width, image.height):
        return image
    im = Image.fromarray(image.pixels).resize((w, h), resample=Image.Resampling.BOX)
    return ImageCanvas(np.asarray(im, dtype=np.uint8).copy())


def sliding_tiles(width: int, height: int, side: int) -> list[RoiWindow]:
    """Stride-``side`` grid, row-major; edge tiles are clipped (and padded on crop)."""
    if side < 1:
        raise ValueError("side must be >= 1")
    tiles = []
    for j in range(math.ceil(height / side)):
        for i in range(math.ceil(width / side)):
            x0, y0 = i * side, j * side
            tiles.append(RoiWindow(x0, y0, side, min(side, width - x0), min(side, height - y0)))
    return tiles


def oracle_crop(targets: Sequence[GeomBox], side: int, width: int, height: int) -> RoiWindow:
    """Window centered on the mean of the target centers (diagnostic use only)."""
    if not targets:
        raise ValueError("oracle crop needs at least one target")
    cs = [center(b) for b in targets]
    cx = sum(c[0] for c in cs) / len(cs)
    cy = sum(c[1] for c in cs) / len(cs)
    return make_roi((min(max(cx, 0), width), min(max(cy, 0), height)), side, width, height)


def draw_outline(
    pixels: np.ndarray, box: GeomBox, color: tuple[int, int, int], thickness: int = 3
) -> None:
    """Draw a ``thickness``-pixel outline along the inside of ``box``'s edges, in place."""
    h, w = pixels.shape[:2]
    if box.kind is BoxKind.HBB:
        _outline_hbb(pixels, box.coords, color, thickness)
        return
    verts = box.vertices()
    x1, y1, x2, y2 = box.bounds()
    c0, c1 = max(0, int(math.floor(x1)) - 1), min(w, int(math.ceil(x2)) + 1)
    r0, r1 = max(0, int(math.floor(y1)) - 1), min(h, int(math.ceil(y2)) + 1)
    if c0 >= c1 or r0 >= r1:
        return
    px, py = np.meshgrid(np.arange(c0, c1) + 0.5, np.arange(r0, r1) + 0.5)
    sign = 1.0 if sum(
        verts[i][0] * verts[(i + 1) % 4][1] - verts[(i + 1) % 4][0] * verts[i][1] for i in range(4)
    ) > 0 else -1.0
    inside = np.ones_like(px, dtype=bool)
    near = np.zeros_like(px, dtype=bool)
    for i in range(4):
        (ax, ay), (bx, by) = verts[i], verts[(i + 1) % 4]
        length = math.hypot(bx - ax, by - ay)
        dist = sign * ((bx - ax) * (py - ay) - (by - ay) * (px - ax)) / length
        inside &= dist >= 0
        near |= dist < thickness
    region = pixels[r0:r1, c0:c1]
    region[inside & near] = color


def _outline_hbb(pixels: np.ndarray, coords, color, thickness: int) -> None:
    # same pixel set as the general path, via 1-D masks instead of a full grid
    h, w = pixels.shape[:2]
    x1, y1, x2, y2 = coords
    cols = np.arange(w) + 0.5
    rows = np.arange(h) + 0.5
    col_in = (cols >= x1) & (cols <= x2)
    row_in = (rows >= y1) & (rows <= y2)
    col_near = col_in & ((cols - x1 < thickness) | (x2 - cols < thickness))
    row_near = row_in & ((rows - y1 < thickness) | (y2 - rows < thickness))
    ri, ci = np.flatnonzero(row_in), np.flatnonzero(col_in)
    rn, cn = np.flatnonzero(row_near), np.flatnonzero(col_near)
    if len(ri) and len(cn):
        pixels[np.ix_(ri, cn)] = color
    if len(rn) and len(ci):
        pixels[np.ix_(rn, ci)] = color
