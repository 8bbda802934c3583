"""Synthetic scenes and rule-based task derivation.

A scene is a textured canvas with small colored rectangles (axis-aligned or
rotated) standing in for annotated objects, so every derived answer is known
exactly. Derivation functions return ``None`` when a candidate would be
ambiguous or empty; callers simply try another candidate.

Everything is a pure function of the parameters and the seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from .coords import round_half_away
from .dataset import Sample, save_dataset, validate_sample
from .geometry import BoxKind, GeomBox, InvalidGeometry, RectRegion, center, point_distance
from .imaging import ImageCanvas, draw_outline, save_image
from .metrics import TASKS
from .rle import box_fill_mask, rasterize_box, rle_compress

MAX_PLACEMENT_ATTEMPTS = 1000
MARKER_THICKNESS = 3
MARKER_RED = (255, 0, 0)
MARKER_BLUE = (0, 0, 255)

COLORS: dict[str, tuple[int, int, int]] = {
    "red": (196, 48, 40),
    "orange": (230, 140, 30),
    "yellow": (222, 206, 52),
    "white": (238, 238, 238),
    "black": (28, 28, 30),
    "teal": (30, 150, 150),
}


@dataclass(frozen=True)
class CategoryInfo:
    group: str
    subcategories: tuple[str, ...]
    shape: str  # "hbb" or "obb"
    length: tuple[int, int]  # long side range in pixels
    component: str


TAXONOMY: dict[str, CategoryInfo] = {
    "car": CategoryInfo("vehicle", ("sedan", "suv", "pickup"), "hbb", (16, 24), "hood"),
    "truck": CategoryInfo("vehicle", ("cargo truck", "tanker truck", "dump truck"), "hbb", (24, 36), "cab"),
    "van": CategoryInfo("vehicle", ("cargo van", "minibus", "camper van"), "hbb", (18, 28), "front"),
    "bus": CategoryInfo("vehicle", ("city bus", "coach", "school bus"), "hbb", (28, 40), "front"),
    "ship": CategoryInfo("vessel", ("container ship", "oil tanker", "bulk carrier"), "obb", (30, 48), "bow"),
    "boat": CategoryInfo("vessel", ("fishing boat", "speedboat", "sailboat"), "obb", (16, 26), "bow"),
    "airplane": CategoryInfo("aircraft", ("airliner", "fighter jet", "cargo plane"), "obb", (28, 44), "nose section"),
    "helicopter": CategoryInfo("aircraft", ("transport helicopter", "attack helicopter", "utility helicopter"), "hbb", (18, 28), "cockpit"),
}

PATTERNS = ("scattered", "clustered", "linear")
PATTERN_TEXT = {
    "scattered": "scattered roughly uniformly across the image",
    "clustered": "concentrated in a few dense clusters",
    "linear": "aligned along a single line",
    "grid": "arranged in a regular grid",
}
DIRECTIONS = ("north", "northeast", "east", "southeast", "south", "southwest", "west", "northwest")
ORDINALS = ("first", "second", "third", "fourth")
LETTERS = "ABCDEFGH"


class SceneGenerationError(RuntimeError):
    pass


class QuotaShortfall(RuntimeError):
    def __init__(self, deficits: dict):
        self.deficits = deficits
        super().__init__(f"not enough samples for the requested quotas: {deficits}")


@dataclass(frozen=True)
class SceneObject:
    id: int
    category: str
    subcategory: str
    color: str
    box: GeomBox
    component: GeomBox

    @property
    def hbb(self) -> list[float]:
        return _hbb_list(self.box)

    def to_dict(self) -> dict:
        return {"id": self.id, "category": self.category, "subcategory": self.subcategory,
                "color": self.color, "box": self.box.to_list()}


@dataclass
class SceneParams:
    width: int = 2048
    height: int = 1536
    n_objects: int = 40
    min_separation: float = 48.0
    categories: tuple[str, ...] = tuple(TAXONOMY)
    pattern: str | None = None  # None: drawn from PATTERNS per scene


@dataclass
class SceneSpec:
    id: str
    width: int
    height: int
    seed: int
    pattern: str
    objects: list[SceneObject]
    regions: dict[str, RectRegion]

    def by_category(self, category: str) -> list[SceneObject]:
        return [o for o in self.objects if o.category == category]


def _hbb_list(box: GeomBox) -> list[float]:
    x1, y1, x2, y2 = box.bounds()
    return [math.floor(x1), math.floor(y1), math.ceil(x2), math.ceil(y2)]


def _quadrants(w: int, h: int) -> dict[str, RectRegion]:
    mx, my = w // 2, h // 2
    return {
        "top-left quadrant": RectRegion(0, 0, mx, my),
        "top-right quadrant": RectRegion(mx, 0, w, my),
        "bottom-left quadrant": RectRegion(0, my, mx, h),
        "bottom-right quadrant": RectRegion(mx, my, w, h),
    }


def _make_box(shape: str, cx: float, cy: float, length: float, breadth: float, angle: float) -> tuple[GeomBox, GeomBox]:
    """Object box and its component (the leading third along the long axis)."""
    if shape == "hbb":
        horizontal = angle < math.pi / 2
        w, h = (length, breadth) if horizontal else (breadth, length)
        x1, y1 = round_half_away(cx - w / 2), round_half_away(cy - h / 2)
        x2, y2 = x1 + round_half_away(w), y1 + round_half_away(h)
        box = GeomBox.hbb(x1, y1, x2, y2)
        if horizontal:
            comp = GeomBox.hbb(x1, y1, x1 + round_half_away((x2 - x1) / 3), y2)
        else:
            comp = GeomBox.hbb(x1, y1, x2, y1 + round_half_away((y2 - y1) / 3))
        return box, comp
    ux, uy = math.cos(angle), math.sin(angle)
    vx, vy = -uy, ux
    hl, hb = length / 2, breadth / 2
    pts = [
        (cx - ux * hl - vx * hb, cy - uy * hl - vy * hb),
        (cx + ux * hl - vx * hb, cy + uy * hl - vy * hb),
        (cx + ux * hl + vx * hb, cy + uy * hl + vy * hb),
        (cx - ux * hl + vx * hb, cy - uy * hl + vy * hb),
    ]
    pts = [(round(x, 1), round(y, 1)) for x, y in pts]
    box = GeomBox.obb(pts)
    p0, p1, p2, p3 = pts

    def lerp(a, b, t):
        return (round(a[0] + (b[0] - a[0]) * t, 1), round(a[1] + (b[1] - a[1]) * t, 1))

    comp = GeomBox.obb([p0, lerp(p0, p1, 1 / 3), lerp(p3, p2, 1 / 3), p3])
    return box, comp


def _sample_center(rng: np.random.Generator, pattern: str, w: int, h: int, anchors: list) -> tuple[float, float]:
    if pattern == "clustered":
        ax, ay = anchors[int(rng.integers(len(anchors)))]
        s = min(w, h) / 9
        return float(rng.normal(ax, s)), float(rng.normal(ay, s))
    if pattern == "linear":
        (x0, y0), (x1, y1), band = anchors
        t = float(rng.uniform(0, 1))
        off = float(rng.uniform(-band, band))
        dx, dy = x1 - x0, y1 - y0
        norm = math.hypot(dx, dy)
        return x0 + t * dx - dy / norm * off, y0 + t * dy + dx / norm * off
    return float(rng.uniform(0, w)), float(rng.uniform(0, h))


def _texture(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    # blocky fields: cheap to render and to store as PNG
    coarse = rng.integers(70, 130, size=(max(2, h // 32), max(2, w // 32), 3), dtype=np.uint8)
    coarse[..., 1] = np.clip(coarse[..., 1].astype(int) + 12, 0, 255)
    im = Image.fromarray(coarse).resize((w, h), resample=Image.Resampling.NEAREST)
    return np.asarray(im, dtype=np.uint8).copy()


def generate_scene(params: SceneParams, seed: int, scene_id: str | None = None) -> tuple[SceneSpec, ImageCanvas]:
    """Place and render ``params.n_objects`` objects with rejection sampling."""
    w, h = params.width, params.height
    if w < 256 or h < 256:
        raise SceneGenerationError("canvas must be at least 256x256")
    if params.n_objects < 1:
        raise SceneGenerationError("at least one object is required")
    rng = np.random.default_rng(seed)
    pattern = params.pattern or PATTERNS[int(rng.integers(len(PATTERNS)))]
    if pattern == "clustered":
        anchors: list = [(float(rng.uniform(0.2, 0.8) * w), float(rng.uniform(0.2, 0.8) * h))
                         for _ in range(int(rng.integers(2, 4)))]
    elif pattern == "linear":
        theta = float(rng.uniform(-0.5, 0.5))
        half = 0.45 * math.hypot(w, h)
        cx, cy = w / 2, h / 2
        anchors = [(cx - half * math.cos(theta), cy - half * math.sin(theta)),
                   (cx + half * math.cos(theta), cy + half * math.sin(theta)),
                   max(params.min_separation * 1.5, 0.04 * min(w, h))]
    else:
        anchors = []
    categories = list(params.categories)
    colors = list(COLORS)
    objects: list[SceneObject] = []
    centers: list[tuple[float, float]] = []
    for oid in range(params.n_objects):
        cat = categories[int(rng.integers(len(categories)))]
        info = TAXONOMY[cat]
        sub = info.subcategories[int(rng.integers(len(info.subcategories)))]
        color = colors[int(rng.integers(len(colors)))]
        length = float(rng.uniform(*info.length))
        breadth = length * float(rng.uniform(0.4, 0.6))
        angle = float(rng.uniform(0, math.pi))
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            cx, cy = _sample_center(rng, pattern, w, h, anchors)
            if any(math.hypot(cx - px, cy - py) < params.min_separation for px, py in centers):
                continue
            try:
                box, comp = _make_box(info.shape, cx, cy, length, breadth, angle)
            except InvalidGeometry:
                continue
            x1, y1, x2, y2 = box.bounds()
            if x1 < 2 or y1 < 2 or x2 > w - 2 or y2 > h - 2:
                continue
            break
        else:
            raise SceneGenerationError(
                f"could not place object {oid} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
        centers.append((cx, cy))
        objects.append(SceneObject(oid, cat, sub, color, box, comp))

    pixels = _texture(rng, w, h)
    for obj in objects:
        _fill(pixels, obj.box, COLORS[obj.color])
        shade = tuple(int(c * 0.55) for c in COLORS[obj.color])
        _fill(pixels, obj.component, shade)
    spec = SceneSpec(scene_id or f"scene{seed}", w, h, seed, pattern, objects, _quadrants(w, h))
    return spec, ImageCanvas(pixels)


def _fill(pixels: np.ndarray, box: GeomBox, color) -> None:
    x1, y1, x2, y2 = box.bounds()
    c0, r0 = max(0, int(x1) - 1), max(0, int(y1) - 1)
    c1, r1 = min(pixels.shape[1], int(math.ceil(x2)) + 1), min(pixels.shape[0], int(math.ceil(y2)) + 1)
    shifted = _shift(box, -c0, -r0)
    grid = rasterize_box(shifted, r1 - r0, c1 - c0)
    pixels[r0:r1, c0:c1][grid] = color


def _shift(box: GeomBox, dx: float, dy: float) -> GeomBox:
    c = box.coords
    return GeomBox(box.kind, tuple(v + (dx if i % 2 == 0 else dy) for i, v in enumerate(c)))


# --------------------------------------------------------------------------- derivation


@dataclass
class Derived:
    sample: Sample
    image: ImageCanvas | None = None  # per-sample image (e.g. with relation markers)


def _straddles(obj: SceneObject, region: RectRegion) -> bool:
    x1, y1, x2, y2 = obj.box.bounds()
    inside = x1 >= region.x1 and y1 >= region.y1 and x2 <= region.x2 and y2 <= region.y2
    outside = x2 <= region.x1 or x1 >= region.x2 or y2 <= region.y1 or y1 >= region.y2
    return not (inside or outside)


def _inside(objs: Sequence[SceneObject], region: RectRegion) -> list[SceneObject]:
    out = []
    for o in objs:
        cx, cy = center(o.box)
        if region.contains_point(cx, cy):
            out.append(o)
    return out


def clean_region(scene: SceneSpec, rng: np.random.Generator, attempts: int = 50) -> RectRegion | None:
    """Random rectangle that no object straddles."""
    for _ in range(attempts):
        rw = int(rng.uniform(0.2, 0.45) * scene.width)
        rh = int(rng.uniform(0.2, 0.45) * scene.height)
        x1 = int(rng.integers(0, scene.width - rw))
        y1 = int(rng.integers(0, scene.height - rh))
        region = RectRegion(x1, y1, x1 + rw, y1 + rh)
        if not any(_straddles(o, region) for o in scene.objects):
            return region
    return None


def _base(scene: SceneSpec, task: str, key: str, query: str, fmt: str, target, **kw) -> Sample:
    meta = kw.pop("meta", {})
    meta = {"scene": scene.id, **meta}
    return Sample(
        id=f"{scene.id}-{task}-{key}",
        image=kw.pop("image", f"images/{scene.id}.png"),
        width=scene.width,
        height=scene.height,
        task=task,
        query=query,
        answer_format=fmt,
        target=target,
        meta=meta,
        **kw,
    )


def _plural(cat: str) -> str:
    return cat + ("es" if cat.endswith("s") else "s")


def derive_detection(scene: SceneSpec, category: str, region: RectRegion | None = None) -> Sample | None:
    """GD over the whole image, or RD when ``region`` is given (center-in-region membership)."""
    objs = scene.by_category(category)
    if region is not None:
        objs = _inside(objs, region)
    if not objs:
        return None
    fmt = TAXONOMY[category].shape
    targets = [o.box for o in objs]
    meta = {"target_ids": [o.id for o in objs], "evidence": [o.hbb for o in objs]}
    if region is None:
        return _base(scene, "GD", category, f"Detect every {category} in the image.", fmt, targets, meta=meta)
    key = f"{category}-{'-'.join(str(int(v)) for v in region.as_tuple())}"
    return _base(scene, "RD", key, f"Detect every {category} inside the region {{region}}.",
                 fmt, targets, region=region, meta=meta)


def derive_counting(
    scene: SceneSpec,
    category: str,
    region: RectRegion | None = None,
    attribute: str | None = None,
    allow_zero: bool = False,
) -> Sample | None:
    """GC (global), RC (``region``) or CC (``attribute`` color filter)."""
    objs = scene.by_category(category)
    if region is not None:
        objs = _inside(objs, region)
    if attribute is not None:
        objs = [o for o in objs if o.color == attribute]
    if not objs and not allow_zero:
        return None
    meta = {"target_ids": [o.id for o in objs], "evidence": [o.hbb for o in objs]}
    if region is not None:
        key = f"{category}-{'-'.join(str(int(v)) for v in region.as_tuple())}"
        return _base(scene, "RC", key, f"How many {_plural(category)} are inside the region {{region}}?",
                     "count", len(objs), region=region, meta=meta)
    if attribute is not None:
        return _base(scene, "CC", f"{attribute}-{category}",
                     f"How many {attribute} {_plural(category)} are in the image?",
                     "count", len(objs), meta=meta)
    return _base(scene, "GC", category, f"How many {_plural(category)} are in the image?",
                 "count", len(objs), meta=meta)


def derive_crc(scene: SceneSpec, region_a: RectRegion, region_b: RectRegion, category: str) -> Sample:
    a = _inside(scene.by_category(category), region_a)
    b = _inside(scene.by_category(category), region_b)
    key = f"{category}-" + "-".join(str(int(v)) for v in region_a.as_tuple() + region_b.as_tuple())
    query = (f"Count the {_plural(category)} inside region {{region_a}} and inside region {{region_b}}. "
             "What is the absolute difference between the two counts?")
    return _base(scene, "CRC", key, query, "count", abs(len(a) - len(b)), meta={
        "refs": {"region_a": region_a.to_list(), "region_b": region_b.to_list()},
        "counts": [len(a), len(b)],
        "evidence": [o.hbb for o in a + b],
    })


def compass_bearing(origin: tuple[float, float], target: tuple[float, float]) -> float:
    """Degrees clockwise from image-up (north) in ``[0, 360)``."""
    dx = target[0] - origin[0]
    dy = target[1] - origin[1]
    return math.degrees(math.atan2(dx, -dy)) % 360.0


def direction_label(bearing: float, margin: float = 10.0) -> str | None:
    """8-way sector of ``bearing``; ``None`` when within ``margin`` of a sector boundary."""
    offset = (bearing - 22.5) % 45.0
    if min(offset, 45.0 - offset) < margin:
        return None
    return DIRECTIONS[int(((bearing + 22.5) % 360.0) // 45.0)]


def _marked_image(scene_image: ImageCanvas, marks: Sequence[tuple[GeomBox, tuple[int, int, int]]]) -> ImageCanvas:
    pixels = scene_image.pixels.copy()
    for box, color in marks:
        x1, y1, x2, y2 = box.bounds()
        pad = MARKER_THICKNESS + 1
        outer = GeomBox.hbb(max(0, math.floor(x1) - pad), max(0, math.floor(y1) - pad),
                            min(pixels.shape[1], math.ceil(x2) + pad), min(pixels.shape[0], math.ceil(y2) + pad))
        draw_outline(pixels, outer, color, MARKER_THICKNESS)
    return ImageCanvas(pixels)


def derive_direction(
    scene: SceneSpec, scene_image: ImageCanvas, obj_a: SceneObject, obj_b: SceneObject, margin: float = 10.0
) -> Derived | None:
    if obj_a.id == obj_b.id:
        return None
    bearing = compass_bearing(center(obj_a.box), center(obj_b.box))
    label = direction_label(bearing, margin)
    if label is None:
        return None
    key = f"{obj_a.id}-{obj_b.id}"
    choices = {LETTERS[i]: d for i, d in enumerate(DIRECTIONS)}
    sample = _base(
        scene, "DrR", key,
        "Relative to the object marked with a red box, in which direction is the object marked with a blue box?",
        "option", LETTERS[DIRECTIONS.index(label)], choices=choices,
        image=f"images/{scene.id}-DrR-{key}.png",
        meta={"relation": {"a": obj_a.hbb, "b": obj_b.hbb, "bearing": round(bearing, 6)},
              "evidence": [obj_a.hbb, obj_b.hbb]},
    )
    return Derived(sample, _marked_image(scene_image, [(obj_a.box, MARKER_RED), (obj_b.box, MARKER_BLUE)]))


def distance_answer(distances: Sequence[float], mode: str = "nearest", margin: float = 1.3) -> int | None:
    """Index of the nearest/farthest candidate, or ``None`` when the top two are within ``margin``."""
    if len(distances) < 2:
        return None
    order = sorted(range(len(distances)), key=lambda i: distances[i], reverse=(mode == "farthest"))
    best, second = distances[order[0]], distances[order[1]]
    lo, hi = min(best, second), max(best, second)
    if lo <= 0 or hi / lo < margin:
        return None
    return order[0]


def derive_distance(
    scene: SceneSpec,
    scene_image: ImageCanvas,
    reference: SceneObject,
    candidates: Sequence[SceneObject],
    mode: str = "nearest",
    margin: float = 1.3,
) -> Derived | None:
    if len(candidates) < 2 or any(c.id == reference.id for c in candidates):
        return None
    rc = center(reference.box)
    dists = [point_distance(rc, center(c.box)) for c in candidates]
    idx = distance_answer(dists, mode, margin)
    if idx is None:
        return None
    key = f"{mode}-{reference.id}-" + "-".join(str(c.id) for c in candidates)
    refs = {f"c{i}": c.hbb for i, c in enumerate(candidates)}
    choices = {LETTERS[i]: f"the object at {{c{i}}}" for i in range(len(candidates))}
    sample = _base(
        scene, "DsR", key,
        f"Several candidate objects are marked with blue boxes. Which candidate is {mode} to the object "
        "marked with a red box?",
        "option", LETTERS[idx], choices=choices,
        image=f"images/{scene.id}-DsR-{key}.png",
        meta={"refs": refs, "relation": {"reference": reference.hbb, "candidates": [c.hbb for c in candidates],
                                          "mode": mode},
              "evidence": [reference.hbb] + [c.hbb for c in candidates]},
    )
    marks = [(reference.box, MARKER_RED)] + [(c.box, MARKER_BLUE) for c in candidates]
    return Derived(sample, _marked_image(scene_image, marks))


def _options(correct: str, siblings: Sequence[str], pool: Sequence[str], rng: np.random.Generator) -> list[str] | None:
    """Correct label plus three distractors, siblings first, in seeded order."""
    distractors: list[str] = []
    for group in (list(siblings), [p for p in pool if p not in siblings]):
        group = [g for g in dict.fromkeys(group) if g != correct and g not in distractors]
        rng.shuffle(group)
        distractors.extend(group[: 3 - len(distractors)])
        if len(distractors) == 3:
            break
    if len(distractors) < 3:
        return None
    opts = [correct] + distractors
    rng.shuffle(opts)
    return opts


def derive_classification(
    scene: SceneSpec, instance: SceneObject, fine: bool, rng: np.random.Generator,
    taxonomy: dict[str, CategoryInfo] = TAXONOMY,
) -> Sample | None:
    """OC (category) or FGR (subcategory) four-way multiple choice."""
    info = taxonomy.get(instance.category)
    if info is None:
        return None
    if fine:
        correct = instance.subcategory
        siblings = list(info.subcategories) + [s for c, i in taxonomy.items()
                                                if i.group == info.group and c != instance.category
                                                for s in i.subcategories]
        pool = [s for i in taxonomy.values() for s in i.subcategories]
    else:
        correct = instance.category
        siblings = [c for c, i in taxonomy.items() if i.group == info.group]
        pool = list(taxonomy)
    opts = _options(correct, siblings, pool, rng)
    if opts is None:
        return None
    choices = {LETTERS[i]: o for i, o in enumerate(opts)}
    task = "FGR" if fine else "OC"
    query = (f"Which specific type is the {instance.category} at {{box}}?" if fine
             else "What is the category of the object at {box}?")
    return _base(scene, task, str(instance.id), query, "option", LETTERS[opts.index(correct)],
                 choices=choices, meta={"refs": {"box": instance.hbb}, "target_ids": [instance.id],
                                        "evidence": [instance.hbb]})


def _unique_objects(scene: SceneSpec) -> list[SceneObject]:
    seen: dict[tuple[str, str], int] = {}
    for o in scene.objects:
        seen[(o.color, o.category)] = seen.get((o.color, o.category), 0) + 1
    return [o for o in scene.objects if seen[(o.color, o.category)] == 1]


def _grounding_meta(scene: SceneSpec, target: SceneObject, referring: Sequence[int], region=None) -> dict:
    meta = {
        "target_ids": [target.id],
        "referring_ids": list(referring),
        "objects": [o.to_dict() for o in scene.objects],
        "evidence": [target.hbb],
    }
    if region is not None:
        meta["semantic_region"] = region.to_list()
    return meta


def derive_basic_grounding(scene: SceneSpec, target: SceneObject) -> Sample | None:
    if target not in _unique_objects(scene):
        return None
    return _base(scene, "BG", str(target.id), f"Locate the {target.color} {target.category}.",
                 TAXONOMY[target.category].shape, [target.box],
                 meta=_grounding_meta(scene, target, [target.id]))


def _ordered_in_region(scene: SceneSpec, objs: list[SceneObject], region: RectRegion, gap: float) -> list[SceneObject] | None:
    if any(_straddles(o, region) for o in objs):
        return None
    inside = sorted(_inside(objs, region), key=lambda o: center(o.box)[0])
    xs = [center(o.box)[0] for o in inside]
    if any(b - a < gap for a, b in zip(xs, xs[1:])):
        return None
    return inside


def derive_complex_grounding(
    scene: SceneSpec, category: str, region_name: str, ordinal: int, gap: float = 16.0
) -> Sample | None:
    """Ordinal-from-left target among a category inside a named quadrant."""
    region = scene.regions[region_name]
    ordered = _ordered_in_region(scene, scene.by_category(category), region, gap)
    if not ordered or len(ordered) < 2 or ordinal >= len(ordered) or ordinal >= len(ORDINALS):
        return None
    target = ordered[ordinal]
    query = (f"Among the {_plural(category)} in the {region_name}, locate the "
             f"{ORDINALS[ordinal]} one counting from the left.")
    return _base(scene, "CG", f"{category}-{region_name.split()[0]}-{ordinal}", query,
                 TAXONOMY[category].shape, [target.box],
                 meta=_grounding_meta(scene, target, [target.id], region))


def derive_retrieval(scene: SceneSpec, category: str, color: str, region_name: str) -> Sample | None:
    region = scene.regions[region_name]
    objs = [o for o in scene.by_category(category) if o.color == color]
    if any(_straddles(o, region) for o in objs):
        return None
    hits = _inside(objs, region)
    if not hits:
        return None
    query = f"Find every {color} {category} located in the {region_name}."
    return _base(scene, "MCR", f"{color}-{category}-{region_name.split()[0]}", query,
                 TAXONOMY[category].shape, [o.box for o in hits],
                 meta={"target_ids": [o.id for o in hits], "evidence": [o.hbb for o in hits],
                       "semantic_region": region.to_list()})


def derive_segmentation(scene: SceneSpec, target: SceneObject, component: bool) -> Sample | None:
    """RS (whole object) or CS (its component); targets are box-filled masks."""
    # axis-aligned objects only, so a box prompt can reproduce the mask exactly
    if target.box.kind is not BoxKind.HBB or target not in _unique_objects(scene):
        return None
    shape = target.component if component else target.box
    mask = box_fill_mask(shape, scene.height, scene.width)
    if component:
        task = "CS"
        query = f"Segment the {TAXONOMY[target.category].component} of the {target.color} {target.category}."
    else:
        task = "RS"
        query = f"Segment the {target.color} {target.category}."
    return _base(scene, task, str(target.id), query, "mask", rle_compress(mask),
                 meta={"target_ids": [target.id], "target_box": _hbb_list(shape),
                       "evidence": [target.hbb]})


def derive_pattern(scene: SceneSpec, rng: np.random.Generator) -> Sample:
    opts = list(PATTERN_TEXT)
    rng.shuffle(opts)
    choices = {LETTERS[i]: PATTERN_TEXT[p] for i, p in enumerate(opts)}
    xs = [center(o.box)[0] for o in scene.objects]
    ys = [center(o.box)[1] for o in scene.objects]
    mid = [round(float(np.mean(xs))), round(float(np.mean(ys)))]
    return _base(scene, "PDR", "pattern", "Which description best matches how the objects are distributed "
                 "across the image?", "option", LETTERS[opts.index(scene.pattern)], choices=choices,
                 meta={"pattern": scene.pattern,
                       "evidence": [[mid[0] - 1, mid[1] - 1, mid[0] + 1, mid[1] + 1]]})


# --------------------------------------------------------------------------- pools and splits


def _derive_for_task(task: str, scene: SceneSpec, image: ImageCanvas, rng: np.random.Generator) -> Derived | None:
    cats = sorted({o.category for o in scene.objects})
    pick = lambda seq: seq[int(rng.integers(len(seq)))]  # noqa: E731
    if task == "GD":
        s = derive_detection(scene, pick(cats))
    elif task == "RD":
        region = clean_region(scene, rng)
        s = derive_detection(scene, pick(cats), region) if region else None
    elif task == "BG":
        s = derive_basic_grounding(scene, pick(scene.objects))
    elif task == "CG":
        s = derive_complex_grounding(scene, pick(cats), pick(sorted(scene.regions)), int(rng.integers(0, 3)))
    elif task == "MCR":
        o = pick(scene.objects)
        s = derive_retrieval(scene, o.category, o.color, pick(sorted(scene.regions)))
    elif task in ("OC", "FGR"):
        s = derive_classification(scene, pick(scene.objects), task == "FGR", rng)
    elif task in ("RS", "CS"):
        s = derive_segmentation(scene, pick(scene.objects), task == "CS")
    elif task == "GC":
        s = derive_counting(scene, pick(cats))
    elif task == "RC":
        region = clean_region(scene, rng)
        s = derive_counting(scene, pick(cats), region=region) if region else None
    elif task == "CC":
        o = pick(scene.objects)
        s = derive_counting(scene, o.category, attribute=o.color)
    elif task == "CRC":
        a, b = clean_region(scene, rng), clean_region(scene, rng)
        if a is None or b is None or a == b:
            return None
        s = derive_crc(scene, a, b, pick(cats))
    elif task == "DrR":
        i, j = rng.choice(len(scene.objects), size=2, replace=False)
        return derive_direction(scene, image, scene.objects[int(i)], scene.objects[int(j)])
    elif task == "DsR":
        idx = rng.choice(len(scene.objects), size=4, replace=False)
        ref, cands = scene.objects[int(idx[0])], [scene.objects[int(k)] for k in idx[1:]]
        mode = "nearest" if rng.random() < 0.5 else "farthest"
        return derive_distance(scene, image, ref, cands, mode)
    elif task == "PDR":
        s = derive_pattern(scene, rng)
    else:
        raise ValueError(f"unknown task {task}")
    return Derived(s) if s is not None else None


@dataclass
class Pool:
    samples: list[Sample] = field(default_factory=list)
    images: dict[str, ImageCanvas] = field(default_factory=dict)


def generate_pool(
    params: SceneParams,
    seed: int,
    needed: dict[str, int],
    tries_per_scene: int = 6,
    max_scenes: int = 400,
) -> Pool:
    """Generate scenes until every task in ``needed`` has at least that many samples."""
    pool = Pool()
    have = {t: 0 for t in needed}
    seen: set[str] = set()
    root = np.random.SeedSequence(seed)
    for k, child in enumerate(root.spawn(max_scenes)):
        if all(have[t] >= n for t, n in needed.items()):
            break
        scene_seed = int(child.generate_state(1)[0])
        scene, image = generate_scene(params, scene_seed, scene_id=f"s{seed}_{k:04d}")
        rng = np.random.default_rng(child.spawn(1)[0])
        used = False
        for task in needed:
            for _ in range(tries_per_scene):
                if have[task] >= needed[task]:
                    break
                d = _derive_for_task(task, scene, image, rng)
                if d is None or d.sample.id in seen:
                    continue
                validate_sample(d.sample)
                seen.add(d.sample.id)
                pool.samples.append(d.sample)
                have[task] += 1
                if d.image is not None:
                    pool.images[d.sample.image] = d.image
                else:
                    used = True
        if used:
            pool.images[f"images/{scene.id}.png"] = image
    deficits = {t: needed[t] - have[t] for t in needed if have[t] < needed[t]}
    if deficits:
        raise QuotaShortfall(deficits)
    return pool


@dataclass
class SplitPlan:
    """Per-task sample quotas for the development / validation / test splits."""

    quotas: dict[str, dict[str, int]]

    SPLITS = ("dev", "val", "test")

    def __post_init__(self) -> None:
        for task, q in self.quotas.items():
            for split, n in q.items():
                if split not in self.SPLITS or n < 0:
                    raise ValueError(f"bad quota {task}/{split}={n}")

    @classmethod
    def balanced_validation(cls, per_task: int = 100, tasks: Sequence[str] = TASKS) -> SplitPlan:
        return cls({t: {"val": per_task} for t in tasks})

    def total(self, task: str) -> int:
        return sum(self.quotas.get(task, {}).values())


def build_splits(
    samples: Sequence[Sample], plan: SplitPlan, seed: int, disjoint_images: bool = False
) -> dict[str, list[Sample]]:
    """Seeded disjoint partition honoring the plan.

    With ``disjoint_images`` whole scenes are assigned to one split, so no
    image (or marker image derived from it) appears in two splits.
    """
    rng = np.random.default_rng(seed)
    by_task: dict[str, list[Sample]] = {}
    for s in samples:
        by_task.setdefault(s.task, []).append(s)
    deficits = {t: {"needed": plan.total(t), "available": len(by_task.get(t, []))}
                for t in plan.quotas if len(by_task.get(t, [])) < plan.total(t)}
    if deficits:
        raise QuotaShortfall(deficits)
    out: dict[str, list[Sample]] = {s: [] for s in SplitPlan.SPLITS}
    if not disjoint_images:
        for task in sorted(plan.quotas):
            items = list(by_task[task])
            order = rng.permutation(len(items))
            pos = 0
            for split in SplitPlan.SPLITS:
                n = plan.quotas[task].get(split, 0)
                out[split].extend(items[int(i)] for i in order[pos:pos + n])
                pos += n
        return out
    scenes = sorted({s.meta.get("scene", s.image) for s in samples})
    scene_order = [scenes[int(i)] for i in rng.permutation(len(scenes))]
    by_scene: dict[str, list[Sample]] = {}
    for s in samples:
        by_scene.setdefault(s.meta.get("scene", s.image), []).append(s)
    remaining = list(scene_order)
    short: dict[str, dict[str, int]] = {}
    for split in SplitPlan.SPLITS:
        need = {t: q.get(split, 0) for t, q in plan.quotas.items()}
        taken = []
        while any(v > 0 for v in need.values()) and remaining:
            # take the scene that helps most; ties resolved by the seeded order
            best = max(remaining, key=lambda sc: sum(1 for s in by_scene[sc] if need.get(s.task, 0) > 0))
            if not any(need.get(s.task, 0) > 0 for s in by_scene[best]):
                break
            remaining.remove(best)
            for s in by_scene[best]:
                if need.get(s.task, 0) > 0:
                    taken.append(s)
                    need[s.task] -= 1
        if any(v > 0 for v in need.values()):
            short[split] = {t: v for t, v in need.items() if v > 0}
        out[split] = taken
    if short:
        raise QuotaShortfall(short)
    return out


def write_suite(
    out_dir: str | Path,
    splits: dict[str, list[Sample]],
    images: dict[str, ImageCanvas],
    manifest: dict,
) -> dict[str, Path]:
    """Write split files, the images they reference and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    referenced: set[str] = set()
    for split, samples in splits.items():
        if not samples:
            continue
        samples = sorted(samples, key=lambda s: (TASKS.index(s.task), s.id))
        path = out_dir / f"{split}.jsonl"
        save_dataset(samples, path)
        paths[split] = path
        referenced.update(s.image for s in samples)
    for ref in sorted(referenced):
        save_image(images[ref], out_dir / ref)
    counts = {split: len(s) for split, s in splits.items() if s}
    body = {**manifest, "counts": counts, "images": len(referenced)}
    (out_dir / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def generate_suite(
    out_dir: str | Path,
    plan: SplitPlan,
    seed: int,
    params: SceneParams | None = None,
    disjoint_images: bool = False,
) -> dict[str, Path]:
    params = params or SceneParams()
    # over-generate a little so the seeded split has a choice
    needed = {t: plan.total(t) + max(2, plan.total(t) // 10) for t in plan.quotas}
    pool = generate_pool(params, seed, needed)
    splits = build_splits(pool.samples, plan, seed, disjoint_images)
    manifest = {
        "seed": seed,
        "scene_params": {**asdict(params), "categories": list(params.categories)},
        "plan": plan.quotas,
        "disjoint_images": disjoint_images,
    }
    return write_suite(out_dir, splits, pool.images, manifest)


def self_score(sample: Sample) -> float:
    """Score of the sample's own ground truth against itself (1.0 for consistent samples)."""
    from .metrics import best_box_score, counting_score, greedy_match, option_score, s_mask, soft_f1
    from .parsing import ParsedAnswer

    if sample.answer_format in ("hbb", "obb"):
        boxes = sample.target_boxes()
        if sample.is_multi:
            return soft_f1(greedy_match(boxes, boxes))
        return best_box_score(boxes[0], boxes)
    if sample.answer_format == "mask":
        m = sample.target_mask()
        return s_mask(m, m)
    if sample.answer_format == "count":
        return counting_score(sample.target, sample.target)
    return float(option_score(sample.target, ParsedAnswer.of_option(sample.target)))


TaskDeriver = Callable[[SceneSpec, ImageCanvas, np.random.Generator], "Derived | None"]
