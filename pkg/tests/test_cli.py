import csv
import json
import re

import pytest

from conftest import TINY
from ttcod.cli import main
from ttcod.metrics import METRIC_NAMES

FLAGS = [f"--{k.replace('_', '-')}={v}" for k, v in TINY.items()]
ERROR_LINE = re.compile(r'^error kind=(\w+) msg=(".*")$')


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def parse_error(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1, err
    m = ERROR_LINE.match(lines[0])
    assert m, lines[0]
    return m.group(1), json.loads(m.group(2))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """gen-data plus an M3 and an M1 run on the tiny config."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), *FLAGS]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "m3"), *FLAGS]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "m1"), "--variant", "M1", *FLAGS]) == 0
    return root


def test_train_writes_checkpoint_config_and_csvs(trained):
    run = trained / "m3"
    for name in ("model.sttc", "config.txt", "losses.csv", "metrics.csv", "per_image_test.csv"):
        assert (run / name).is_file(), name
    assert len(list((run / "preds" / "test").glob("*.pgm"))) == TINY["n_test"]
    rows = list(csv.DictReader(open(run / "metrics.csv")))
    assert [(r["variant"], r["dataset"]) for r in rows] == [("M3", "test")]
    cfg_hash = rows[0]["config_hash"]
    assert len(cfg_hash) == 16
    for name in ("losses.csv", "per_image_test.csv"):
        assert {r["config_hash"] for r in csv.DictReader(open(run / name))} == {cfg_hash}
    assert all(0 <= float(rows[0][k]) <= 1 for k in METRIC_NAMES)


def test_repeated_commands_are_byte_identical(trained, tmp_path):
    flags = ["--data", str(trained / "data"), *FLAGS]
    assert main(["gen-data", "--out", str(tmp_path / "data"), *FLAGS]) == 0
    assert tree_bytes(tmp_path / "data") == tree_bytes(trained / "data")
    assert main(["train", "--out", str(tmp_path / "m3"), *flags]) == 0
    assert tree_bytes(tmp_path / "m3") == tree_bytes(trained / "m3")


def test_steps_zero_reports_untrained_model(tmp_path, trained, capsys):
    code, out, _ = run(capsys, "train", "--data", str(trained / "data"), "--out", str(tmp_path / "r"),
                       "--variant", "M1", *FLAGS, "--steps", "0")
    assert code == 0
    assert "M1 test S_alpha=" in out
    assert (tmp_path / "r" / "losses.csv").read_text().count("\n") == 1


def test_eval_run_matches_train_metrics(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--run", str(trained / "m3"), "--data", str(trained / "data"),
                       "--out", str(tmp_path / "ev"))
    assert code == 0 and out.startswith("M3 test ")
    assert (tmp_path / "ev" / "metrics.csv").read_bytes() == (trained / "m3" / "metrics.csv").read_bytes()


def test_eval_prediction_directories(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--pred", str(trained / "m3" / "preds" / "test"),
                       "--gt", str(trained / "data" / "test" / "masks"), "--out", str(tmp_path / "ev"))
    assert code == 0 and out.startswith("external test ")
    ours = list(csv.DictReader(open(trained / "m3" / "per_image_test.csv")))
    theirs = list(csv.DictReader(open(tmp_path / "ev" / "per_image.csv")))
    assert [r["MAE"] for r in ours] == [r["MAE"] for r in theirs]


def test_probe_runs_and_csv_inputs(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "probe", "--base-run", str(trained / "m1"), "--variant-run", str(trained / "m3"),
                       "--channels", "0,1,2", "--out", str(tmp_path / "p"))
    assert code == 0 and "effect_distance=" in out
    lines = (tmp_path / "p" / "gain_table.csv").read_text().splitlines()
    assert lines[0] == "row,0,1,2,config_hash" and len(lines) == 5
    again = tmp_path / "p2"
    assert main(["probe", "--base-run", str(trained / "m1"), "--variant-run", str(trained / "m3"),
                 "--channels", "0,1,2", "--out", str(again)]) == 0
    assert tree_bytes(again) == tree_bytes(tmp_path / "p")

    base = tmp_path / "b.csv"
    base.write_text("channel,delta\nI,-0.0009\n")
    var = tmp_path / "v.csv"
    var.write_text("channel,delta\nI,-0.0022\n")
    code, out, _ = run(capsys, "probe", "--base-csv", str(base), "--variant-csv", str(var),
                       "--out", str(tmp_path / "p3"))
    assert code == 0
    rel = (tmp_path / "p3" / "gain_table.csv").read_text().splitlines()[-1].split(",")
    assert rel[0] == "relative_gain_pct" and round(float(rel[1]), 2) == -144.44


def test_report_from_run_metrics(trained, tmp_path, capsys):
    code, out, _ = run(capsys, "report", str(trained / "m1" / "metrics.csv"), str(trained / "m3" / "metrics.csv"),
                       "--out", str(tmp_path / "rep"))
    assert code == 0
    assert [line.split()[0] for line in out.splitlines()[:2]] == ["M1", "M3"]
    for name in ("report.csv", "report_pn.svg", "report_metrics.svg"):
        assert (tmp_path / "rep" / name).is_file()


def test_ablate_emits_seven_settings(trained, tmp_path, capsys):
    code, _, _ = run(capsys, "ablate", "--data", str(trained / "data"), "--out", str(tmp_path / "ab"),
                     *FLAGS, "--steps", "1")
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "ab" / "ablation.csv")))
    assert rows[0] == ["setting", "config_hash", *(f"test_{k}" for k in METRIC_NAMES), "P", "N"]
    assert [r[0] for r in rows[1:]] == ["L0", "L1", "L2", "L3", "L4", "L5", "L4+eps"]
    assert len({r[1] for r in rows[1:]}) == 7


def test_output_root_env(trained, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("TTCOD_OUTPUT_ROOT", str(tmp_path))
    code, _, _ = run(capsys, "report", str(trained / "m3" / "metrics.csv"), "--out", "rel")
    assert code == 0 and (tmp_path / "rel" / "report.csv").is_file()


def test_config_file_with_flag_override(trained, tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("\n".join(f"{k}={v}" for k, v in TINY.items()) + "\nvariant=M2\n")
    code, out, _ = run(capsys, "train", "--config", str(cfg), "--data", str(trained / "data"),
                       "--out", str(tmp_path / "r"), "--steps", "0")
    assert code == 0 and out.splitlines()[1].startswith("M2 test ")
    assert "steps=0\n" in (tmp_path / "r" / "config.txt").read_text()


@pytest.mark.parametrize("argv,kind,code", [
    (["train", "--data", "/nonexistent/data", "--out", "/tmp/x"], "FileNotFoundError", 1),
    (["gen-data", "--variant", "M7"], "ValueError", 1),
    (["gen-data", "--steps", "many"], "ValueError", 1),
    (["eval", "--out", "/tmp/ttcod-eval-x"], "ValueError", 1),
    (["frobnicate"], "UsageError", 2),
    (["train", "--no-such-flag"], "UsageError", 2),
])
def test_errors_are_one_parseable_line(argv, kind, code, capsys):
    if code == 2:
        with pytest.raises(SystemExit) as exc:
            main(argv)
        got = exc.value.code
        err = capsys.readouterr().err
    else:
        got, _, err = run(capsys, *argv)
    assert got == code
    assert parse_error(err)[0] == kind


def test_bad_report_csv_names_the_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("variant,S_alpha\nX,0.5\nY,oops\n")
    code, _, err = run(capsys, "report", str(bad), "--out", str(tmp_path / "r"))
    kind, msg = parse_error(err)
    assert code == 1 and kind == "CsvFormatError" and "bad.csv:3:" in msg
