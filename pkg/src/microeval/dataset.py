"""Sample records: schema, validation and newline-delimited JSON storage.

One JSON object per line::

    {"id": "...", "image": "images/scene_0001.png", "width": 2048, "height": 1536,
     "task": "RD", "query": "Detect every car inside {region}.",
     "region": [x1, y1, x2, y2], "answer_format": "hbb",
     "target": [[x1, y1, x2, y2], ...], "choices": null,
     "coord_protocol": null, "meta": {...}}

Box targets and regions are absolute pixels on the original canvas. Mask
targets are compressed RLE text (see :mod:`microeval.rle`) sized
``height x width``. Query and choice texts may hold ``{name}`` placeholders
whose pixel coordinates live in ``region`` or ``meta["refs"]``; they are
rendered in the model-facing convention at prompt time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .geometry import BoxKind, GeomBox, InvalidGeometry, RectRegion, box_within
from .metrics import TASKS
from .parsing import AnswerSpec, BoxFormat
from .rle import MaskError, RleMask

MULTI_BOX_TASKS = frozenset({"GD", "RD", "MCR"})
SINGLE_BOX_TASKS = frozenset({"BG", "CG"})
MASK_TASKS = frozenset({"RS", "CS"})
COUNT_TASKS = frozenset({"GC", "RC", "CC", "CRC"})
OPTION_TASKS = frozenset({"OC", "FGR", "DrR", "DsR", "PDR"})
REGION_TASKS = frozenset({"RD", "RC"})

TASK_FORMATS: dict[str, frozenset[str]] = {}
for _t in MULTI_BOX_TASKS | SINGLE_BOX_TASKS:
    TASK_FORMATS[_t] = frozenset({"hbb", "obb"})
for _t in MASK_TASKS:
    TASK_FORMATS[_t] = frozenset({"mask"})
for _t in COUNT_TASKS:
    TASK_FORMATS[_t] = frozenset({"count"})
for _t in OPTION_TASKS:
    TASK_FORMATS[_t] = frozenset({"option"})


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    id: str
    image: str
    width: int
    height: int
    task: str
    query: str
    answer_format: str
    target: Any
    region: RectRegion | None = None
    choices: dict[str, str] | None = None
    coord_protocol: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def is_multi(self) -> bool:
        return self.task in MULTI_BOX_TASKS

    @property
    def answer_kind(self) -> str:
        if self.answer_format in ("hbb", "obb"):
            return "boxes"
        if self.answer_format == "mask":
            return "mask"
        return self.answer_format

    def target_boxes(self) -> list[GeomBox]:
        return list(self.target)

    def target_mask(self) -> RleMask:
        return RleMask.from_text(self.target, self.height, self.width)

    def answer_spec(self) -> AnswerSpec:
        """How replies are parsed; segmentation tasks answer with one HBB prompt box."""
        if self.answer_format in ("hbb", "obb"):
            return AnswerSpec("boxes", BoxFormat(self.answer_format), self.is_multi)
        if self.answer_format == "mask":
            return AnswerSpec("boxes", BoxFormat.HBB, False)
        if self.answer_format == "count":
            return AnswerSpec("count")
        return AnswerSpec("option", labels=tuple(sorted(self.choices or ())))

    def refs(self) -> dict[str, list[float]]:
        out = {k: list(v) for k, v in self.meta.get("refs", {}).items()}
        if self.region is not None:
            out.setdefault("region", list(self.region.as_tuple()))
        return out

    def to_record(self) -> dict:
        if self.answer_format in ("hbb", "obb"):
            target: Any = [b.to_list() for b in self.target]
        else:
            target = self.target
        return {
            "id": self.id,
            "image": self.image,
            "width": self.width,
            "height": self.height,
            "task": self.task,
            "query": self.query,
            "region": self.region.to_list() if self.region is not None else None,
            "answer_format": self.answer_format,
            "target": target,
            "choices": self.choices,
            "coord_protocol": self.coord_protocol,
            "meta": self.meta,
        }

    @classmethod
    def from_record(cls, rec: dict) -> Sample:
        try:
            fmt = rec["answer_format"]
            target = rec["target"]
            if fmt in ("hbb", "obb"):
                if not isinstance(target, list):
                    raise DatasetError(f"{fmt} target must be a list of boxes")
                kind = BoxKind(fmt)
                target = [GeomBox(kind, tuple(b)) for b in target]
            region = rec.get("region")
            return cls(
                id=str(rec["id"]),
                image=rec["image"],
                width=int(rec["width"]),
                height=int(rec["height"]),
                task=rec["task"],
                query=rec["query"],
                answer_format=fmt,
                target=target,
                region=RectRegion(*region) if region is not None else None,
                choices=rec.get("choices"),
                coord_protocol=rec.get("coord_protocol"),
                meta=rec.get("meta") or {},
            )
        except (KeyError, TypeError, InvalidGeometry) as exc:
            raise DatasetError(f"malformed record: {exc!r}") from exc


def validate_sample(s: Sample) -> None:
    if s.task not in TASKS:
        raise DatasetError(f"unknown task code {s.task!r}")
    if s.answer_format not in TASK_FORMATS[s.task]:
        raise DatasetError(f"task {s.task} cannot have answer_format {s.answer_format!r}")
    if s.width < 1 or s.height < 1:
        raise DatasetError("image dimensions must be positive")
    if s.task in REGION_TASKS and s.region is None:
        raise DatasetError(f"task {s.task} requires a region")
    if s.region is not None:
        r = s.region
        if r.x1 < 0 or r.y1 < 0 or r.x2 > s.width or r.y2 > s.height:
            raise DatasetError(f"region {r.to_list()} outside {s.width}x{s.height} image")
    fmt = s.answer_format
    if fmt in ("hbb", "obb"):
        if not isinstance(s.target, list) or not s.target:
            raise DatasetError("box target must be a non-empty list")
        if s.task in SINGLE_BOX_TASKS and len(s.target) != 1:
            raise DatasetError(f"task {s.task} expects exactly one target box")
        for b in s.target:
            if not isinstance(b, GeomBox) or b.kind.value != fmt:
                raise DatasetError(f"target box does not match format {fmt}")
            if not box_within(b, s.width, s.height):
                raise DatasetError(f"target box {b.to_list()} outside {s.width}x{s.height} image")
    elif fmt == "mask":
        if not isinstance(s.target, str):
            raise DatasetError("mask target must be compressed RLE text")
        try:
            m = s.target_mask()
        except MaskError as exc:
            raise DatasetError(f"undecodable mask target: {exc}") from exc
        if m.area == 0:
            raise DatasetError("mask target is empty")
    elif fmt == "count":
        if isinstance(s.target, bool) or not isinstance(s.target, int) or s.target < 0:
            raise DatasetError("count target must be a non-negative integer")
    else:
        if not s.choices or not isinstance(s.target, str) or s.target not in s.choices:
            raise DatasetError("option target must be one of the choice labels")


def load_dataset(path: str | Path) -> list[Sample]:
    samples: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise DatasetError("record is not an object")
                sample = Sample.from_record(rec)
                validate_sample(sample)
            except (json.JSONDecodeError, DatasetError) as exc:
                raise DatasetError(f"{path}: record {lineno}: {exc}") from exc
            samples.append(sample)
    return samples


def dumps_record(sample: Sample) -> str:
    return json.dumps(sample.to_record(), sort_keys=True, separators=(",", ":"))


def save_dataset(samples: Iterable[Sample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(dumps_record(s) + "\n")


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
