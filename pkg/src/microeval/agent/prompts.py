"""Prompt builders for each pipeline stage and for the single-call strategies."""

from __future__ import annotations

import re
from typing import Sequence

from ..coords import Convention, CoordFrame, from_abs
from ..dataset import Sample
from ..geometry import GeomBox
from ..parsing import BoxFormat

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")
FINAL_MARK = "Final answer:"
CANDIDATE_MARK = "candidate boxes"


def fmt_number(v: float, convention: Convention) -> str:
    digits = {Convention.UNIT: 5, Convention.THOUSAND: 2}.get(convention, 1)
    s = f"{v:.{digits}f}"
    s = s.rstrip("0").rstrip(".")
    return s or "0"


def fmt_values(values: Sequence[float], convention: Convention) -> str:
    return "[" + ", ".join(fmt_number(v, convention) for v in values) + "]"


def fmt_boxes(boxes: Sequence[GeomBox], frame: CoordFrame) -> str:
    return "[" + ", ".join(fmt_values(from_abs(b.coords, frame), frame.convention) for b in boxes) + "]"


def render_template(text: str, refs: dict[str, list[float]], frame: CoordFrame) -> str:
    """Replace ``{name}`` placeholders with the pixel rectangle in ``frame``'s convention."""

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in refs:
            return m.group(0)
        return fmt_values(from_abs(refs[name], frame), frame.convention)

    return _PLACEHOLDER.sub(sub, text)


def convention_note(frame: CoordFrame, local: bool = False) -> str:
    where = "this crop" if local else "the image"
    if frame.convention is Convention.THOUSAND:
        return (f"Coordinates are normalized to 0-1000 on both axes of {where}: (0, 0) is the top-left "
                f"corner and (1000, 1000) the bottom-right corner.")
    if frame.convention is Convention.UNIT:
        return (f"Coordinates are fractions between 0 and 1 of the width and height of {where}, "
                f"measured from the top-left corner.")
    return (f"Coordinates are pixels of {where} ({frame.width} wide, {frame.height} tall), "
            f"measured from the top-left corner.")


def answer_instruction(sample: Sample) -> str:
    fmt = sample.answer_format
    if fmt == "mask":
        return ("Give one tight horizontal box [x1, y1, x2, y2] around the target; "
                "it will be handed to a segmentation model.")
    if fmt in ("hbb", "obb"):
        shape = "[x1, y1, x2, y2]" if BoxFormat(fmt) is BoxFormat.HBB else \
            "[x1, y1, x2, y2, x3, y3, x4, y4] listing the four corners in order"
        if sample.is_multi:
            return f"Give every matching object as a box {shape}, collected in one list [[...], [...]]."
        return f"Give the single matching object as one box {shape}."
    if fmt == "count":
        return "Give the count as one whole number written with digits."
    return "Give only the letter of the correct option."


def task_text(sample: Sample, frame: CoordFrame) -> str:
    refs = sample.refs()
    lines = [render_template(sample.query, refs, frame)]
    if sample.choices:
        for label in sorted(sample.choices):
            lines.append(f"{label}. {render_template(sample.choices[label], refs, frame)}")
    return "\n".join(lines)


def direct_prompt(
    sample: Sample, frame: CoordFrame, answer_frame: CoordFrame | None = None, view: str = "the full image"
) -> str:
    """Single-call prompt used by the non-agentic strategies.

    ``frame`` renders coordinates inside the question (always the full
    image); ``answer_frame`` is the canvas the reply should refer to.
    """
    answer_frame = answer_frame or frame
    lines = [f"You are looking at {view} of an aerial scene.", task_text(sample, frame)]
    if answer_frame != frame:
        lines.append("Coordinates inside the question refer to the original full image.")
    return "\n".join([
        *lines,
        "For your answer: " + convention_note(answer_frame, local=answer_frame != frame),
        answer_instruction(sample),
        f"End your reply with a line of the form '{FINAL_MARK} <answer>'.",
    ])


def discovery_prompt(sample: Sample, frame: CoordFrame, budget: int) -> str:
    return "\n".join([
        "Task for a later step:",
        task_text(sample, frame),
        "",
        "Do not answer the task now. Point at the places in the image that are most worth a close look "
        f"for this task: up to {budget} point(s), most promising first, each as [x, y].",
        convention_note(frame),
        "Reply with a list such as [[x, y], [x, y]] and nothing else.",
    ])


def inspection_prompt(sample: Sample, frame: CoordFrame, local: CoordFrame) -> str:
    """``frame`` renders the query (full image); ``local`` is the crop's own frame."""
    return "\n".join([
        f"The picture is a {local.width}x{local.height} close-up cut out of a much larger aerial image.",
        "Question about the whole image (coordinates in the question refer to the whole image):",
        task_text(sample, frame),
        "",
        "Judge only from what can be seen inside this close-up. For boxes, " + convention_note(local, local=True),
        answer_instruction(sample),
        "For counting questions count only the objects visible in this close-up.",
        "If nothing relevant is visible here, reply with the single word null.",
    ])


def evidence_line(index: int, rect: Sequence[float], summary: str, frame: CoordFrame) -> str:
    return f"- region {index + 1} at {fmt_values(from_abs(rect, frame), frame.convention)}: {summary}"


def synthesis_prompt(sample: Sample, frame: CoordFrame, evidence_lines: Sequence[str]) -> str:
    parts = [
        "The image is the full aerial scene; the regions that were examined up close are outlined on it.",
        "Question:",
        task_text(sample, frame),
        "",
        "Notes from the close-up examinations (coordinates use the full image):",
        *(evidence_lines or ["- no regions were examined"]),
        "",
        convention_note(frame),
    ]
    if sample.answer_format in ("hbb", "obb") and sample.is_multi:
        parts.append("Combine the candidate boxes from all regions; when several boxes describe the same "
                     "object keep only one of them.")
    parts += [
        "Use the notes together with the full view to decide.",
        answer_instruction(sample),
        f"The last line of your reply must begin with '{FINAL_MARK}' followed by the answer.",
    ]
    return "\n".join(parts)
