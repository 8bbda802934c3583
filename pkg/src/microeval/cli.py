"""``microeval`` command line: generate, eval, diagnose, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .agent.backends import API_KEY_ENV, ModelBackend, RemoteBackend, RemoteSegmenter, ScriptedBackend
from .agent.oracle import OracleBackend
from .agent.pipeline import ConfigError, MapConfig, RoiBudgetPolicy
from .agent.strategies import Strategy, validate_strategy
from .coords import Convention
from .dataset import DatasetError, file_digest, load_dataset
from .evaluate import evaluate
from .imaging import ImageCache
from .metrics import TASKS
from .report import RunError, compare_runs, diagnose_run, diagnosis_text, load_run, write_comparison, write_run
from .taskgen import QuotaShortfall, SceneGenerationError, SceneParams, SplitPlan, generate_suite

log = logging.getLogger("microeval")


def _tasks(text: str | None) -> list[str]:
    if not text:
        return list(TASKS)
    tasks = [t.strip() for t in text.split(",") if t.strip()]
    unknown = [t for t in tasks if t not in TASKS]
    if unknown:
        raise ConfigError(f"unknown task codes: {', '.join(unknown)}")
    return tasks


def cmd_generate(args: argparse.Namespace) -> int:
    params = SceneParams()
    if args.config:
        overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        for key, value in overrides.items():
            if not hasattr(params, key):
                raise ConfigError(f"unknown scene parameter {key!r}")
            setattr(params, key, tuple(value) if key == "categories" else value)
    for key in ("width", "height"):
        if getattr(args, key) is not None:
            setattr(params, key, getattr(args, key))
    if args.objects is not None:
        params.n_objects = args.objects
    if args.min_sep is not None:
        params.min_separation = args.min_sep
    tasks = _tasks(args.tasks)
    quotas = {t: {k: n for k, n in (("dev", args.dev), ("val", args.val), ("test", args.test)) if n} for t in tasks}
    plan = SplitPlan(quotas)
    paths = generate_suite(args.out, plan, args.seed, params, args.disjoint_images)
    for split, path in paths.items():
        print(f"{split}: {path}")
    return 0


def _backend(args: argparse.Namespace, samples) -> ModelBackend:
    if args.scripted:
        if args.scripted == "oracle":
            return OracleBackend(samples)
        if args.scripted == "null":
            return ScriptedBackend(responder=lambda request: "null")
        path = Path(args.scripted)
        if not path.is_file():
            raise ConfigError(f"--scripted expects 'oracle', 'null' or a transcript file, got {args.scripted!r}")
        return ScriptedBackend.from_transcript(path)
    if not args.backend_url or not args.model:
        raise ConfigError("a remote run needs --backend-url and --model (or use --scripted)")
    return RemoteBackend(args.backend_url, args.model)


def cmd_eval(args: argparse.Namespace) -> int:
    strategy = Strategy.parse(args.strategy)
    cfg = MapConfig(side=args.crop_size, policy=RoiBudgetPolicy.parse(args.roi_policy),
                    protocol=Convention(args.protocol))
    dataset = Path(args.dataset)
    samples = load_dataset(dataset)
    tasks = set(_tasks(args.tasks))
    samples = [s for s in samples if s.task in tasks]
    if args.limit:
        samples = samples[: args.limit]
    if not samples:
        raise ConfigError("no samples selected")
    validate_strategy(strategy, samples, args.oracle)
    backend = _backend(args, samples)
    segmenter = RemoteSegmenter(args.segmenter_url) if args.segmenter_url else None
    config = {
        "dataset": str(dataset),
        "dataset_sha256": file_digest(dataset),
        "strategy": strategy.label,
        "crop_size": cfg.side,
        "roi_policy": cfg.policy.mode.value,
        "protocol": cfg.protocol.value,
        "decoding": {"temperature": cfg.decoding.temperature, "top_p": cfg.decoding.top_p},
        "workers": args.workers,
        "seed": args.seed,
        "oracle": strategy.is_oracle,
        "backend": backend.describe(),
        "segmenter": "remote" if segmenter else "box-fill",
        "tasks": sorted(tasks, key=TASKS.index),
        "samples": len(samples),
        "predictions_stored": not args.no_predictions,
    }
    results = evaluate(samples, ImageCache(dataset.parent), backend, strategy, cfg, segmenter,
                       workers=args.workers, oracle_allowed=args.oracle)
    agg = write_run(args.out, config, results, include_predictions=not args.no_predictions)
    print((Path(args.out) / "summary.txt").read_text(encoding="utf-8"), end="")
    empty = sum(r.record.parse_status.value == "empty" for r in results)
    if empty:
        print(f"{empty} sample(s) failed in transport and were scored 0")
    log.debug("overall %.4f", agg.overall)
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    run = load_run(args.run)
    dataset = args.dataset or run.config.get("dataset")
    if not dataset:
        raise ConfigError("cannot tell which dataset the run used; pass --dataset")
    report = diagnose_run(run, load_dataset(dataset))
    out = Path(args.out) if args.out else Path(args.run)
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnosis.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    text = diagnosis_text(report)
    (out / "diagnosis.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    comp = compare_runs(args.runs)
    if args.out:
        write_comparison(comp, args.out)
    print(comp.to_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="microeval", description="Micro-target perception benchmark tooling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic benchmark suite")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tasks", help="comma-separated task codes (default: all 16)")
    g.add_argument("--val", type=int, default=100, help="validation samples per task")
    g.add_argument("--dev", type=int, default=0, help="development samples per task")
    g.add_argument("--test", type=int, default=0, help="test samples per task")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--objects", type=int)
    g.add_argument("--min-sep", type=float)
    g.add_argument("--config", help="JSON file with scene parameters")
    g.add_argument("--disjoint-images", action="store_true", help="never share a scene between splits")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="evaluate a strategy on a dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--strategy", default="map",
                   help="map | native | resize-N | query-crop | oracle-crop-N | sliding-N")
    e.add_argument("--backend-url")
    e.add_argument("--model")
    e.add_argument("--crop-size", type=int, default=1024)
    e.add_argument("--roi-policy", default="task-adaptive",
                   help="task-adaptive | uniform-1 | uniform-2 | uniform-4")
    e.add_argument("--protocol", choices=[c.value for c in Convention], default="thousand")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--oracle", action="store_true", help="allow the ground-truth oracle-crop strategy")
    e.add_argument("--scripted", help="'oracle', 'null' or a transcript file to replay")
    e.add_argument("--segmenter-url")
    e.add_argument("--tasks")
    e.add_argument("--limit", type=int)
    e.add_argument("--no-predictions", action="store_true", help="do not store predictions in records")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="error labels and size correlation for a finished run")
    d.add_argument("--run", required=True)
    d.add_argument("--dataset")
    d.add_argument("--out")
    d.set_defaults(func=cmd_diagnose)

    r = sub.add_parser("report", help="compare finished runs side by side")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, RunError, QuotaShortfall, SceneGenerationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
