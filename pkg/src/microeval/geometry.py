"""Exact 2-D primitives for horizontal (HBB) and oriented (OBB) boxes.

Boxes live in continuous pixel coordinates: an HBB ``[x1, y1, x2, y2]`` has
area ``(x2 - x1) * (y2 - y1)``. OBBs are convex quadrilaterals given by four
vertices. Intersections are computed by clipping one convex polygon against
the half-planes of the other, so HBB/OBB pairs in any mix are handled by the
same code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

EPS = 1e-9

Point = tuple[float, float]


class InvalidGeometry(ValueError):
    """Raised for boxes or polygons that violate their invariants."""


class BoxKind(str, Enum):
    HBB = "hbb"
    OBB = "obb"


def polygon_area(vertices: Sequence[Point]) -> float:
    """Shoelace area (absolute value) of a simple polygon."""
    if len(vertices) < 3:
        raise InvalidGeometry(f"polygon needs >= 3 vertices, got {len(vertices)}")
    return abs(_signed_area(vertices))


def _signed_area(vertices: Sequence[Point]) -> float:
    n = len(vertices)
    acc = 0.0
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return acc / 2.0


def _cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def is_convex_quad(vertices: Sequence[Point]) -> bool:
    """True when the four vertices form a strictly convex, simple quadrilateral."""
    if len(vertices) != 4:
        return False
    signs = []
    for i in range(4):
        c = _cross(vertices[i], vertices[(i + 1) % 4], vertices[(i + 2) % 4])
        if abs(c) <= EPS:
            return False
        signs.append(c > 0)
    if not (all(signs) or not any(signs)):
        return False
    # same-sign turns alone admit a doubly-wound star; the area check rules it out
    return polygon_area(vertices) > EPS


@dataclass(frozen=True)
class GeomBox:
    """A validated HBB or OBB.

    ``coords`` is ``(x1, y1, x2, y2)`` for HBB and ``(x1, y1, ..., x4, y4)``
    for OBB. Construction raises :class:`InvalidGeometry` for misordered,
    degenerate, non-finite, self-intersecting or non-convex input.
    """

    kind: BoxKind
    coords: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", BoxKind(self.kind))
        coords = tuple(float(v) for v in self.coords)
        object.__setattr__(self, "coords", coords)
        if not all(math.isfinite(v) for v in coords):
            raise InvalidGeometry("non-finite coordinate")
        if self.kind is BoxKind.HBB:
            if len(coords) != 4:
                raise InvalidGeometry(f"HBB needs 4 coordinates, got {len(coords)}")
            x1, y1, x2, y2 = coords
            if x1 > x2 or y1 > y2:
                raise InvalidGeometry(f"misordered HBB corners {coords}")
            if (x2 - x1) <= EPS or (y2 - y1) <= EPS:
                raise InvalidGeometry(f"degenerate HBB {coords}")
        else:
            if len(coords) != 8:
                raise InvalidGeometry(f"OBB needs 8 coordinates, got {len(coords)}")
            if not is_convex_quad(self.vertices()):
                raise InvalidGeometry(f"OBB is not a convex simple quadrilateral {coords}")

    @classmethod
    def hbb(cls, x1: float, y1: float, x2: float, y2: float) -> GeomBox:
        return cls(BoxKind.HBB, (x1, y1, x2, y2))

    @classmethod
    def obb(cls, points: Sequence[Point]) -> GeomBox:
        return cls(BoxKind.OBB, tuple(v for p in points for v in p))

    @classmethod
    def from_coords(cls, coords: Sequence[float]) -> GeomBox:
        """Infer the kind from arity (4 -> HBB, 8 -> OBB)."""
        if len(coords) == 4:
            return cls(BoxKind.HBB, tuple(coords))
        if len(coords) == 8:
            return cls(BoxKind.OBB, tuple(coords))
        raise InvalidGeometry(f"box needs 4 or 8 coordinates, got {len(coords)}")

    def vertices(self) -> list[Point]:
        c = self.coords
        if self.kind is BoxKind.HBB:
            x1, y1, x2, y2 = c
            return [(x1, y1), (x2, y1), (x2, y2), (x1, y2)]
        return [(c[i], c[i + 1]) for i in range(0, 8, 2)]

    def bounds(self) -> tuple[float, float, float, float]:
        """Minimum enclosing horizontal box."""
        if self.kind is BoxKind.HBB:
            return self.coords  # type: ignore[return-value]
        xs = self.coords[0::2]
        ys = self.coords[1::2]
        return min(xs), min(ys), max(xs), max(ys)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices())

    def to_list(self) -> list[float]:
        return [int(v) if float(v).is_integer() else v for v in self.coords]


@dataclass(frozen=True)
class RectRegion:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise InvalidGeometry(f"misordered region {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def contains_point(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2

    def clip(self, width: float, height: float) -> RectRegion:
        return RectRegion(
            min(max(self.x1, 0), width),
            min(max(self.y1, 0), height),
            min(max(self.x2, 0), width),
            min(max(self.y2, 0), height),
        )

    def to_list(self) -> list[float]:
        return [int(v) if float(v).is_integer() else v for v in self.as_tuple()]


def _ccw(vertices: list[Point]) -> list[Point]:
    return vertices if _signed_area(vertices) > 0 else vertices[::-1]


def _clip_halfplane(poly: list[Point], a: Point, b: Point) -> list[Point]:
    # keeps the left side of a->b (interior for counter-clockwise clip polygons)
    out: list[Point] = []
    n = len(poly)
    for i in range(n):
        cur = poly[i]
        nxt = poly[(i + 1) % n]
        c_cur = _cross(a, b, cur)
        c_nxt = _cross(a, b, nxt)
        if c_cur >= -EPS:
            out.append(cur)
        if (c_cur >= -EPS) != (c_nxt >= -EPS):
            t = c_cur / (c_cur - c_nxt)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def convex_intersection(a: GeomBox, b: GeomBox) -> list[Point]:
    """Vertices of ``a ∩ b``; an empty list when the overlap has no area."""
    subject = _ccw(a.vertices())
    clip = _ccw(b.vertices())
    for i in range(len(clip)):
        subject = _clip_halfplane(subject, clip[i], clip[(i + 1) % len(clip)])
        if len(subject) < 3:
            return []
    if polygon_area(subject) <= EPS:
        return []
    return subject


def intersection_area(a: GeomBox, b: GeomBox) -> float:
    if a.kind is BoxKind.HBB and b.kind is BoxKind.HBB:
        ax1, ay1, ax2, ay2 = a.coords
        bx1, by1, bx2, by2 = b.coords
        w = min(ax2, bx2) - max(ax1, bx1)
        h = min(ay2, by2) - max(ay1, by1)
        return w * h if w > 0 and h > 0 else 0.0
    poly = convex_intersection(a, b)
    return polygon_area(poly) if poly else 0.0


def iou(a: GeomBox, b: GeomBox) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= EPS:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def center(b: GeomBox) -> Point:
    if b.kind is BoxKind.HBB:
        x1, y1, x2, y2 = b.coords
        return ((x1 + x2) / 2.0, (y1 + y2) / 2.0)
    xs = b.coords[0::2]
    ys = b.coords[1::2]
    return (sum(xs) / 4.0, sum(ys) / 4.0)


def enclosing_diagonal(b: GeomBox) -> float:
    """Diagonal of the minimum enclosing horizontal box."""
    x1, y1, x2, y2 = b.bounds()
    diag = math.hypot(x2 - x1, y2 - y1)
    if diag <= EPS:
        raise InvalidGeometry("degenerate box has no diagonal")
    return diag


def contains_center(region: RectRegion, b: GeomBox) -> bool:
    """Center-in-region membership, boundary inclusive."""
    cx, cy = center(b)
    return region.contains_point(cx, cy)


def point_distance(p: Point, q: Point) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def box_within(b: GeomBox, width: float, height: float) -> bool:
    x1, y1, x2, y2 = b.bounds()
    return x1 >= -EPS and y1 >= -EPS and x2 <= width + EPS and y2 <= height + EPS
