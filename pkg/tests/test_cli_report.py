from __future__ import annotations

import json

import pytest

from microeval.cli import main
from microeval.dataset import file_digest


def _eval(dataset, out, *extra):
    return main(["eval", "--dataset", str(dataset), "--out", str(out), *extra])


def _overall(run):
    return json.loads((run / "aggregate.json").read_text())["overall"]["score"]


def _digests(root):
    return {p.relative_to(root): file_digest(p) for p in sorted(root.rglob("*")) if p.is_file()}


def test_generate_twice_is_identical(tmp_path):
    args = ["--seed", "3", "--tasks", "GC,OC,BG", "--val", "2", "--width", "900", "--height", "700",
            "--objects", "18", "--min-sep", "40"]
    assert main(["generate", "--out", str(tmp_path / "a"), *args]) == 0
    assert main(["generate", "--out", str(tmp_path / "b"), *args]) == 0
    a, b = _digests(tmp_path / "a"), _digests(tmp_path / "b")
    assert a == b and len(a) > 2


def test_oracle_run_scores_full_marks(small_suite, tmp_path, capsys):
    before = _digests(small_suite.parent)
    run = tmp_path / "oracle"
    assert _eval(small_suite, run, "--scripted", "oracle") == 0
    assert "overall" in capsys.readouterr().out
    assert _overall(run) >= 99.0
    names = {p.name for p in run.iterdir()}
    assert {"config.json", "records.jsonl", "transcript.jsonl", "timings.jsonl", "aggregate.json",
            "aggregate.csv", "summary.txt"} <= names
    config = json.loads((run / "config.json").read_text())
    assert config["dataset_sha256"] == file_digest(small_suite)
    assert _digests(small_suite.parent) == before


def test_null_backend_scores_zero(small_suite, tmp_path):
    run = tmp_path / "null"
    assert _eval(small_suite, run, "--scripted", "null") == 0
    assert _overall(run) == 0.0
    statuses = {json.loads(l)["parse_status"] for l in (run / "records.jsonl").read_text().splitlines()}
    assert statuses == {"invalid"}


def test_records_are_reproducible(small_suite, tmp_path):
    _eval(small_suite, tmp_path / "a", "--scripted", "oracle", "--workers", "1")
    _eval(small_suite, tmp_path / "b", "--scripted", "oracle", "--workers", "4")
    for name in ("records.jsonl", "transcript.jsonl", "aggregate.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    agg = [json.loads((tmp_path / k / "aggregate.json").read_text()) for k in "ab"]
    assert agg[0]["config"]["workers"] == 1 and agg[1]["config"]["workers"] == 4
    for a in agg:
        del a["config"]
    assert agg[0] == agg[1]


def test_transcript_replay(small_suite, tmp_path):
    _eval(small_suite, tmp_path / "a", "--scripted", "oracle", "--tasks", "GD,RC,OC")
    transcript = tmp_path / "a" / "transcript.jsonl"
    assert _eval(small_suite, tmp_path / "b", "--scripted", str(transcript), "--tasks", "GD,RC,OC") == 0
    assert (tmp_path / "a" / "records.jsonl").read_bytes() == (tmp_path / "b" / "records.jsonl").read_bytes()


def test_diagnose(small_suite, tmp_path, capsys):
    run = tmp_path / "run"
    _eval(small_suite, run, "--scripted", "oracle", "--tasks", "BG,CG,GD")
    assert main(["diagnose", "--run", str(run)]) == 0
    report = json.loads((run / "diagnosis.json").read_text())
    for hist in report["histograms"].values():
        assert hist["SUCC"]["percent"] == 100.0
    assert {"BG", "CG"} <= set(report["histograms"])
    assert "size correlation" in capsys.readouterr().out

    bare = tmp_path / "bare"
    _eval(small_suite, bare, "--scripted", "oracle", "--tasks", "BG", "--no-predictions")
    assert main(["diagnose", "--run", str(bare)]) == 2
    assert "--no-predictions" in capsys.readouterr().err


def test_report_compares_runs(small_suite, tmp_path, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    _eval(small_suite, a, "--scripted", "oracle", "--tasks", "RD,RC")
    _eval(small_suite, b, "--scripted", "oracle", "--tasks", "RD,RC", "--strategy", "query-crop")
    capsys.readouterr()
    assert main(["report", str(a), str(b), "--out", str(tmp_path / "cmp")]) == 0
    text = capsys.readouterr().out
    assert "a (map)" in text and "b (query-crop)" in text and "WARNING" not in text
    assert (tmp_path / "cmp" / "report.csv").read_text().startswith("row,")

    other = small_suite.parent / "other.jsonl"
    other.write_text(small_suite.read_text().splitlines()[0] + "\n")
    try:
        _eval(other, c, "--scripted", "oracle")
    finally:
        other.unlink()
    capsys.readouterr()
    main(["report", str(a), str(c)])
    assert "different datasets" in capsys.readouterr().out


def test_oracle_crop_is_marked(small_suite, tmp_path, capsys):
    assert _eval(small_suite, tmp_path / "o", "--scripted", "oracle", "--strategy", "oracle-crop-512",
                 "--tasks", "GC") == 2
    assert "--oracle" in capsys.readouterr().err
    assert _eval(small_suite, tmp_path / "o", "--scripted", "oracle", "--strategy", "oracle-crop-512",
                 "--tasks", "GC", "--oracle") == 0
    assert "oracle run" in (tmp_path / "o" / "summary.txt").read_text()
    capsys.readouterr()
    main(["report", str(tmp_path / "o")])
    assert "oracle crop" in capsys.readouterr().out


@pytest.mark.parametrize("extra,needle", [
    (["--strategy", "bogus"], "unknown strategy"),
    (["--strategy", "query-crop"], "region"),
    (["--roi-policy", "weird"], "ROI policy"),
    (["--tasks", "XYZ"], "unknown task"),
    (["--crop-size", "4"], "crop side"),
    ([], "--backend-url"),
])
def test_config_errors_exit_2(small_suite, tmp_path, capsys, extra, needle):
    args = extra if "--scripted" in extra or extra == [] else [*extra, "--scripted", "oracle"]
    assert _eval(small_suite, tmp_path / "r", *args) == 2
    assert needle in capsys.readouterr().err
    assert not (tmp_path / "r").exists()


def test_missing_run_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path / "nope")]) == 2
    assert "not a completed run" in capsys.readouterr().err
