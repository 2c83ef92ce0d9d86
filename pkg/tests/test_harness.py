import json
import math
import subprocess
import sys

import pytest

from torusmin.errors import BudgetError, ConfigError, PreconditionError
from torusmin.harness.cli import main
from torusmin.harness.config import ExperimentConfig, parse_direction
from torusmin.harness.run import (
    EXIT_UNSTABLE,
    RunReport,
    bowen_combination,
    evaluate_flags,
    rerender,
    run,
)

from .conftest import BUMPY

FLAT_SMALL = {"metric": {"type": "flat", "coeffs": []}, "grid": {"resolution": 128, "halfwidth": 40.0}, "seed": 3}


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict({"metric": {"type": "conformal-fourier", "coeffs": BUMPY},
                                      "experiment": {"tube": {"mu": 4.0}}, "seed": 9})
    again = ExperimentConfig.loads(cfg.dumps())
    assert again.to_dict() == cfg.to_dict()
    assert again.block("tube")["mu"] == 4.0
    assert again.block("tube")["delta"] == 0.1
    assert again.build_metric().digest == cfg.build_metric().digest


def test_config_rejects_bad_input():
    with pytest.raises(BudgetError):
        ExperimentConfig.from_dict({"metric": {"type": "conformal-fourier", "coeffs": [[1, 0, 0.9, 0.0]]}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"grid": {"cells": 5}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": {"tube": {"width": 1}}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": {"nonsense": {}}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"flow": {"step": 0.5}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"seed": "x"})
    with pytest.raises(ConfigError):
        ExperimentConfig.loads("{not json")


def test_parse_direction():
    assert parse_direction("0/1") == 0.0
    assert parse_direction("1/1") == pytest.approx(math.pi / 4)
    assert parse_direction("1/0") == pytest.approx(math.pi / 2)
    assert parse_direction(0.3) == 0.3
    assert parse_direction("0.3") == 0.3
    with pytest.raises(ConfigError):
        parse_direction("a/b")


def test_reports_are_deterministic(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(FLAT_SMALL, experiment={"minimal": {"count": 2}}))
    run(cfg, "minimal", out_dir=tmp_path / "a")
    run(cfg, "minimal", out_dir=tmp_path / "b")
    for name in ("report.json", "path_0.csv", "path_1.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    data = json.loads((tmp_path / "a" / "report.json").read_text())
    assert "timings" not in data and "total_seconds" not in json.dumps(data)
    assert "total_seconds" in json.loads((tmp_path / "a" / "timings.json").read_text())


def test_csv_format(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(FLAT_SMALL, experiment={"geodesic": {"T": 3.0}}))
    rep = run(cfg, "geodesic", out_dir=tmp_path)
    raw = (tmp_path / "path.csv").read_bytes()
    assert b"\r" not in raw
    assert raw.decode("utf-8").splitlines()[0] == "t,x1,x2,theta"
    assert rep.passed and rep.exit_code == 0


def test_rerender_matches(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(FLAT_SMALL, experiment={"minimal": {"count": 2}}))
    rep = run(cfg, "minimal", out_dir=tmp_path)
    again = rerender(tmp_path)
    assert [f.to_dict() for f in again.flags] == [f.to_dict() for f in rep.flags]
    assert again.exit_code == rep.exit_code


def _tube_tables(counts):
    return {
        "tubes": [{"direction": 0.4, "mu": 2.0, "delta": 0.1, "T": [5.0, 10.0, 20.0, 40.0], "counts": counts,
                   "C1": 2.5, "same_image_count": 10}],
        "triangles": [{"direction": 0.4, "delta": 0.1, "area": 0.02, "sides": [0.5, 0.1, 0.5]},
                      {"direction": 0.4, "delta": 0.2, "area": 0.04, "sides": [0.5, 0.2, 0.5]}],
    }


def test_tube_flags_from_tables():
    flags = {f.name: f for f in evaluate_flags("tube", {"mu": 2.0}, _tube_tables([40, 40, 40, 40]))}
    assert all(f.passed for f in flags.values())
    assert flags["C2-positive[delta=0.1]"].value == 0.02
    grown = {f.name: f for f in evaluate_flags("tube", {"mu": 2.0}, _tube_tables([2, 20, 400, 80000]))}
    assert not grown["tube-slope[direction=0.4]"].passed
    assert not grown["tube-slope-log[direction=0.4]"].passed


def test_bowen_combination():
    v = bowen_combination(0.0, 3.0, [(3.0, 0.0), (3.0, 0.01)])
    assert v.passed and not v.offending
    v = bowen_combination(0.3, 3.0, [(3.0, 0.0)])
    assert not v.passed and v.offending == ["spanning entropy at scale beta"]
    v = bowen_combination(0.0, 3.0, [(3.0, 0.2)])
    assert v.offending == ["tail entropy inside beta-tubes"]
    with pytest.raises(PreconditionError):
        bowen_combination(0.0, 3.0, [(2.5, 0.0)])


def test_instability_takes_precedence():
    rep = RunReport("minimal", {}, {}, {}, instability=[{"record": 0}])
    assert rep.passed and rep.exit_code == EXIT_UNSTABLE


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["metric-info"]) == 0
    assert "metric-info: PASS" in capsys.readouterr().out
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"metric": {"type": "conformal-fourier", "coeffs": [[1, 0, 0.9, 0.0]]}}))
    assert main(["metric-info", "--config", str(bad)]) == 2
    assert "budget" in capsys.readouterr().err
    small = tmp_path / "small.json"
    small.write_text(json.dumps(dict(FLAT_SMALL, grid={"resolution": 64, "halfwidth": 5.0})))
    assert main(["minimal", "--config", str(small)]) == 2
    assert main(["report", str(tmp_path / "missing")]) == 2
    out = tmp_path / "out"
    assert main(["minimal", "--direction", "1/2", "--out", str(out)]) == 0
    assert main(["report", str(out)]) == 0


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "torusmin.harness.cli", "metric-info"], capture_output=True,
                         text=True, timeout=300)
    assert res.returncode == 0
    assert "A = 1" in res.stdout
