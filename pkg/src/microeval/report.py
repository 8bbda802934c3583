"""Run directories, aggregate tables, diagnosis reports and run comparison.

A run directory holds::

    config.json       run settings, dataset path and sha256, backend description
    records.jsonl     one scored record per sample (deterministic for scripted backends)
    transcript.jsonl  every backend call: sample, stage, request fingerprint, prompt, reply
    timings.jsonl     per-sample wall-clock latency (kept apart so records stay reproducible)
    aggregate.json    task / dimension / overall scores, raw and x100
    aggregate.csv     the same as a flat table
    summary.txt       human-readable table
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .dataset import Sample
from .diagnosis import (
    DiagnosisContext,
    UndefinedCorrelation,
    classify,
    diagnosis_histogram,
    pearson,
    spearman,
    target_size,
)
from .evaluate import SampleResult
from .metrics import DIMENSIONS, TASKS, Aggregate, ParseStatus, ScoreRecord, aggregate
from .parsing import ParsedAnswer

DIAGNOSED_TASKS = ("BG", "CG")
BOX_TASKS = ("GD", "RD", "BG", "CG", "MCR")


class RunError(RuntimeError):
    pass


def _dump_jsonl(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def _load_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def check_consistency(agg: Aggregate) -> None:
    """The overall score must be the plain mean of the task scores."""
    if agg.task_scores:
        mean = math.fsum(agg.task_scores.values()) / len(agg.task_scores)
        if abs(mean - agg.overall) > 1e-12:
            raise AssertionError(f"overall {agg.overall} differs from task mean {mean}")


def aggregate_csv(agg: Aggregate) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "name", "raw", "score", "n"])
    for t, s in agg.task_scores.items():
        w.writerow(["task", t, repr(s), f"{s * 100:.2f}", agg.task_counts[t]])
    for d, s in agg.dimension_scores.items():
        w.writerow(["dimension", d, repr(s), f"{s * 100:.2f}", ""])
    w.writerow(["overall", "overall", repr(agg.overall), f"{agg.overall * 100:.2f}", sum(agg.task_counts.values())])
    return buf.getvalue()


def summary_text(agg: Aggregate, config: dict, mean_calls: float) -> str:
    lines = [f"strategy: {config.get('strategy')}  policy: {config.get('roi_policy')}  "
             f"crop: {config.get('crop_size')}  protocol: {config.get('protocol')}"]
    if config.get("oracle"):
        lines.append("NOTE: oracle run (crops placed with ground truth); not a fair evaluation.")
    lines.append(f"{'task':<8}{'dimension':<15}{'score':>8}{'n':>6}")
    for dim, tasks in DIMENSIONS.items():
        for t in tasks:
            if t in agg.task_scores:
                lines.append(f"{t:<8}{dim:<15}{agg.task_scores[t] * 100:>8.2f}{agg.task_counts[t]:>6}")
    for dim, s in agg.dimension_scores.items():
        lines.append(f"{'':<8}{dim:<15}{s * 100:>8.2f}")
    lines.append(f"{'overall':<23}{agg.overall * 100:>8.2f}")
    lines.append(f"mean calls per sample: {mean_calls:.3f}")
    if agg.missing_tasks:
        lines.append(f"tasks without samples: {', '.join(agg.missing_tasks)}")
    return "\n".join(lines) + "\n"


def write_run(
    out_dir: str | Path,
    config: dict,
    results: Sequence[SampleResult],
    include_predictions: bool = True,
) -> Aggregate:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    strategy = config.get("strategy", "map")
    records = [r.to_record(strategy, include_predictions) for r in results]
    transcript = [entry for r in results for entry in r.prediction.log]
    timings = [{"sample_id": r.sample.id, "latency_s": round(r.latency, 6)} for r in results]
    agg = aggregate([r.record for r in results])
    check_consistency(agg)
    mean_calls = math.fsum(r.record.calls for r in results) / len(results) if results else 0.0
    body = agg.to_dict()
    body["mean_calls"] = mean_calls
    body["config"] = config
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _dump_jsonl(out / "records.jsonl", records)
    _dump_jsonl(out / "transcript.jsonl", transcript)
    _dump_jsonl(out / "timings.jsonl", timings)
    (out / "aggregate.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "aggregate.csv").write_text(aggregate_csv(agg), encoding="utf-8")
    (out / "summary.txt").write_text(summary_text(agg, config, mean_calls), encoding="utf-8")
    return agg


@dataclass
class LoadedRun:
    path: Path
    config: dict
    records: list[dict]
    aggregate: Aggregate = field(init=False)

    def __post_init__(self) -> None:
        self.aggregate = aggregate(
            ScoreRecord(r["sample_id"], r["task"], r["raw_score"], ParseStatus(r["parse_status"]), calls=r["calls"])
            for r in self.records
        )

    @property
    def mean_calls(self) -> float:
        return math.fsum(r["calls"] for r in self.records) / len(self.records) if self.records else 0.0

    @property
    def label(self) -> str:
        mark = "*" if self.config.get("oracle") else ""
        return f"{self.path.name} ({self.config.get('strategy', '?')}){mark}"


def load_run(run_dir: str | Path) -> LoadedRun:
    path = Path(run_dir)
    try:
        config = json.loads((path / "config.json").read_text(encoding="utf-8"))
        records = _load_jsonl(path / "records.jsonl")
    except FileNotFoundError as exc:
        raise RunError(f"{path} is not a completed run directory ({exc.filename} missing)") from exc
    return LoadedRun(path, config, records)


@dataclass
class Comparison:
    columns: list[str]
    rows: list[tuple[str, list[float | None]]]
    warnings: list[str]
    oracle: bool

    def to_text(self) -> str:
        lines = [f"WARNING: {w}" for w in self.warnings]
        width = max(12, *(len(c) + 2 for c in self.columns))
        lines.append(f"{'':<16}" + "".join(f"{c:>{width}}" for c in self.columns))
        for name, vals in self.rows:
            cells = "".join(f"{'-' if v is None else format(v, '.2f'):>{width}}" for v in vals)
            lines.append(f"{name:<16}{cells}")
        if self.oracle:
            lines.append("* oracle crop: windows placed using ground truth; diagnostic only.")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", *self.columns])
        for name, vals in self.rows:
            w.writerow([name, *("" if v is None else f"{v:.2f}" for v in vals)])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {"columns": self.columns, "rows": [{"name": n, "values": v} for n, v in self.rows],
                "warnings": self.warnings}


def compare_runs(run_dirs: Sequence[str | Path]) -> Comparison:
    if not run_dirs:
        raise RunError("need at least one run directory")
    runs = [load_run(d) for d in run_dirs]
    warnings = []
    hashes = {r.config.get("dataset_sha256") for r in runs}
    if len(hashes) > 1:
        warnings.append("runs were evaluated on different datasets; scores are not comparable")
    for r in runs:
        check_consistency(r.aggregate)
    rows: list[tuple[str, list[float | None]]] = []
    for t in TASKS:
        rows.append((t, [r.aggregate.task_scores.get(t) for r in runs]))
    for d in DIMENSIONS:
        rows.append((d, [r.aggregate.dimension_scores.get(d) for r in runs]))
    rows.append(("overall", [r.aggregate.overall if r.aggregate.task_scores else None for r in runs]))
    rows = [(n, [None if v is None else v * 100 for v in vals]) for n, vals in rows]
    rows.append(("calls/sample", [r.mean_calls for r in runs]))
    return Comparison([r.label for r in runs], rows, warnings, any(r.config.get("oracle") for r in runs))


def write_comparison(comp: Comparison, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(comp.to_text(), encoding="utf-8")
    (out / "report.csv").write_text(comp.to_csv(), encoding="utf-8")
    (out / "report.json").write_text(json.dumps(comp.to_json(), indent=2) + "\n", encoding="utf-8")


def _correlation_row(name: str, sizes: list[float], scores: list[float]) -> dict:
    row: dict = {"name": name, "n": len(sizes), "pearson": None, "spearman": None}
    try:
        row["pearson"] = pearson(sizes, scores)
        row["spearman"] = spearman(sizes, scores)
    except (UndefinedCorrelation, ValueError) as exc:
        row["note"] = str(exc)
    return row


def diagnose_run(run: LoadedRun, samples: Sequence[Sample]) -> dict:
    """Label every single-target grounding prediction and correlate target size with score."""
    by_id = {s.id: s for s in samples}
    labels: dict[str, list[str]] = {}
    rows = []
    scale: dict[str, tuple[list[float], list[float]]] = {}
    for rec in run.records:
        sample = by_id.get(rec["sample_id"])
        if sample is None or rec["task"] not in BOX_TASKS:
            continue
        size = target_size(sample.target_boxes())
        sizes, scores = scale.setdefault(rec["task"], ([], []))
        sizes.append(size)
        scores.append(rec["raw_score"])
        if rec["task"] not in DIAGNOSED_TASKS or "objects" not in sample.meta:
            continue
        if "prediction" not in rec:
            raise RunError("records have no stored predictions; rerun eval without --no-predictions")
        if rec["parse_status"] == ParseStatus.EMPTY.value:
            pred = None
        else:
            pred = ParsedAnswer.from_dict(rec["prediction"]["answer"])
        d = classify(pred, DiagnosisContext.from_meta(sample.meta))
        labels.setdefault(rec["task"], []).append(d.label.value)
        rows.append({"sample_id": rec["sample_id"], **d.to_dict()})
    histograms = {t: diagnosis_histogram(v) for t, v in labels.items()}
    all_sizes = [v for s, _ in scale.values() for v in s]
    all_scores = [v for _, s in scale.values() for v in s]
    correlations = [_correlation_row(t, *scale[t]) for t in BOX_TASKS if t in scale]
    if scale:
        correlations.append(_correlation_row("all grounding", all_sizes, all_scores))
    return {"run": str(run.path), "strategy": run.config.get("strategy"), "histograms": histograms,
            "rows": rows, "correlations": correlations}


def diagnosis_text(report: dict) -> str:
    lines = [f"run: {report['run']}  strategy: {report['strategy']}"]
    for task, hist in report["histograms"].items():
        lines.append(f"{task}: " + "  ".join(f"{k} {v['percent']:.1f}%" for k, v in hist.items()))
    lines.append(f"{'size correlation':<18}{'n':>5}{'pearson':>10}{'spearman':>10}")
    for row in report["correlations"]:
        p = "-" if row["pearson"] is None else f"{row['pearson']:.4f}"
        s = "-" if row["spearman"] is None else f"{row['spearman']:.4f}"
        lines.append(f"{row['name']:<18}{row['n']:>5}{p:>10}{s:>10}")
    return "\n".join(lines) + "\n"
