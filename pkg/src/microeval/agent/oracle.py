"""Ground-truth test double.

:class:`OracleBackend` answers every stage from the sample's stored ground
truth, in whatever coordinate convention and view the request describes. It
reads the sample id from ``BackendRequest.meta`` and never looks at pixels,
so end-to-end runs measure only the plumbing: cropping, remapping, rounding
and parsing.
"""

from __future__ import annotations

from typing import Iterable

from ..coords import Convention, CoordFrame, from_abs
from ..dataset import Sample
from ..geometry import GeomBox, center, iou
from ..parsing import BoxFormat, parse_boxes
from .backends import BackendRequest, ModelBackend
from .pipeline import View
from .prompts import CANDIDATE_MARK, FINAL_MARK, fmt_values

_PAD = (1 / 6, 1 / 2, 5 / 6)


class OracleBackend(ModelBackend):
    """Answers from ground truth.

    ``exact`` emits full-precision coordinates; otherwise values are rounded
    to whole units (three decimals in the unit convention), as a careful
    model would write them. ``synthesis="echo"`` makes the final stage merge
    the candidate boxes listed in its prompt instead of reading the truth.
    ``pad_points`` appends a coarse grid of extra discovery points so a
    discovery budget can be filled even when the targets sit close together.
    """

    def __init__(
        self,
        samples: Iterable[Sample],
        exact: bool = False,
        synthesis: str = "truth",
        pad_points: bool = True,
    ) -> None:
        if synthesis not in ("truth", "echo"):
            raise ValueError("synthesis must be 'truth' or 'echo'")
        self.samples = {s.id: s for s in samples}
        self.exact = exact
        self.synthesis = synthesis
        self.pad_points = pad_points

    def describe(self) -> dict:
        return {"type": "OracleBackend", "exact": self.exact, "synthesis": self.synthesis}

    def _num(self, v: float, conv: Convention) -> str:
        if self.exact:
            return repr(float(v))
        if conv is Convention.UNIT:
            return f"{v:.3f}"
        return str(int(round(v)))

    def _values(self, values, conv: Convention) -> str:
        return "[" + ", ".join(self._num(v, conv) for v in values) + "]"

    def complete(self, request: BackendRequest) -> str:
        sample = self.samples[request.meta["sample_id"]]
        conv = Convention(request.meta.get("protocol", Convention.THOUSAND.value))
        view = View(**request.meta["view"])
        if request.stage == "discover":
            return self._points(sample, conv, view)
        if request.stage == "synthesize" and self.synthesis == "echo":
            echoed = self._echo(request.prompt, sample, conv)
            if echoed is not None:
                return echoed
        local = request.stage in ("inspect", "tile")
        body = self._answer(sample, view, conv, local)
        if local or body == "null":
            return body
        return f"Looking at the scene carefully.\n{FINAL_MARK} {body}"

    def _points(self, sample: Sample, conv: Convention, view: View) -> str:
        frame = CoordFrame(conv, view.width, view.height)
        pts = [center(GeomBox.hbb(*b)) for b in sample.meta.get("evidence", [])]
        if sample.answer_format == "mask" and sample.meta.get("target_box"):
            pts.insert(0, center(GeomBox.hbb(*sample.meta["target_box"])))
        if self.pad_points:
            pts += [(fx * view.width, fy * view.height) for fy in _PAD for fx in _PAD]
        return "[" + ", ".join(self._values(from_abs(p, frame), conv) for p in pts) + "]"

    def _targets(self, sample: Sample) -> list[GeomBox]:
        if sample.answer_format == "mask":
            return [GeomBox.hbb(*sample.meta["target_box"])]
        return sample.target_boxes()

    @staticmethod
    def _visible(view: View, box: GeomBox) -> bool:
        m = view.to_meta()
        cx, cy = center(box)
        return m["x0"] <= cx < m["x0"] + m["valid_w"] and m["y0"] <= cy < m["y0"] + m["valid_h"]

    def _answer(self, sample: Sample, view: View, conv: Convention, local: bool) -> str:
        frame = CoordFrame(conv, view.width, view.height)
        kind = sample.answer_spec().kind
        if kind == "option":
            return sample.target
        if kind == "count":
            if not local:
                return str(sample.target)
            evidence = [GeomBox.hbb(*b) for b in sample.meta.get("evidence", [])]
            n = sum(self._visible(view, b) for b in evidence)
            return str(n) if n else "null"
        boxes = [b for b in self._targets(sample) if self._visible(view, b)]
        if not boxes:
            return "null"
        rendered = []
        for b in boxes:
            m = view.to_meta()
            local_px = []
            for i, v in enumerate(b.coords):
                origin, s, valid = (view.x0, view.sx, m["valid_w"]) if i % 2 == 0 else (view.y0, view.sy, m["valid_h"])
                # a careful model clips boxes to the visible content
                local_px.append(min(max(v - origin, 0.0), valid) / s)
            rendered.append(self._values(from_abs(local_px, frame), conv))
        if not sample.is_multi:
            return rendered[0]
        return "[" + ", ".join(rendered) + "]"

    def _echo(self, prompt: str, sample: Sample, conv: Convention) -> str | None:
        if sample.answer_spec().kind != "boxes":
            return None
        found: list[GeomBox] = []
        for line in prompt.splitlines():
            if CANDIDATE_MARK not in line:
                continue
            tail = line.split(CANDIDATE_MARK, 1)[1]
            parsed = parse_boxes(tail, BoxFormat.EITHER)
            if parsed.boxes:
                found.extend(parsed.boxes)
        kept: list[GeomBox] = []
        for b in found:
            if all(iou(b, k) <= 0.5 for k in kept):
                kept.append(b)
        if not kept:
            return None
        if not sample.is_multi:
            kept = kept[:1]
        body = "[" + ", ".join(fmt_values(b.coords, conv) for b in kept) + "]"
        return f"Merged the regional candidates.\n{FINAL_MARK} {body}"

