import json
import subprocess
import sys

import pytest

from eoslab.cli import build_parser, main


def test_parser_flags():
    args = build_parser().parse_args(["linreg", "--eta", "0.3", "--wd", "1e-3", "--steps", "10", "--seed", "2",
                                      "--format", "json", "--record-every", "5", "--project-every", "7",
                                      "--sched", "scalar-rms"])
    assert (args.eta, args.wd, args.steps, args.seed) == (0.3, 1e-3, 10, 2)
    assert (args.format, args.record_every, args.project_every, args.sched) == ("json", 5, 7, "scalar-rms")


def test_example3d_run_writes_trace(tmp_path, capsys):
    out = tmp_path / "e.csv"
    assert main(["example3d", "--steps", "200", "--record-every", "50", "--project-every", "100",
                 "--out", str(out)]) == 0
    assert out.read_text().startswith("t,train_loss")
    assert json.loads((tmp_path / "e.csv.report.json").read_text())["schema"] == 1
    assert "eos_entry_step" in capsys.readouterr().out


def test_driftsim_json(tmp_path):
    out = tmp_path / "d.json"
    assert main(["driftsim", "--steps", "500", "--record-every", "100", "--format", "json",
                 "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["trace"]) == 6


def test_check_subset(tmp_path, capsys):
    out = tmp_path / "c.json"
    assert main(["check", "2", "10", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("[PASS] criterion  2") and lines[-1] == "2/2 criteria passed"
    assert [c["id"] for c in json.loads(out.read_text())["checks"]] == [2, 10]


def test_check_rejects_unknown():
    with pytest.raises(SystemExit):
        main(["check", "99"])


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "eoslab", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
