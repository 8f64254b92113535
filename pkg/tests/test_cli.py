import copy
import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from robust_sls import cli
from robust_sls.lp import LpNumericalError
from robust_sls.operators import fir_l1_norm
from robust_sls.sls import SystemResponse
from robust_sls.synthesis import CostOutput

DEMO = Path(__file__).resolve().parents[1] / "demo" / "chain.json"

SMALL = {
    "plant": {"A": [[1.1, 0.2, 0.0], [0.2, 1.1, 0.2], [0.0, 0.2, 1.1]], "B": np.eye(3).tolist()},
    "cost": {"C": np.eye(3).tolist(), "D": (0.1 * np.eye(3)).tolist()},
    "uncertainty": {"epsilon": 0.1},
    "synthesis": {"fir_horizon": 4, "gamma_tol": 1e-3},
    "verify": {"samples": 30, "horizon": 16, "seed": 1},
    "output": {"dir": "out"},
}


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def synthesized(tmp_path):
    config = write_config(tmp_path, SMALL)
    assert cli.main(["synth", str(config)]) == 0
    return config, tmp_path / "out" / "result.json"


def test_demo_config_is_valid():
    cfg = cli.load_config(DEMO)
    assert cfg.plant.n_states == 4 and cfg.locality == {"d": 2, "tau": 0}


def test_synth_writes_result(synthesized):
    _, result = synthesized
    doc = json.loads(result.read_text())
    assert doc["gamma_star"] > 0
    assert doc["eq22_lhs"] < doc["gamma_star"]
    assert doc["residual_max"] <= 1e-8
    assert doc["bisection_trace"][0][0] == 1.0


def test_result_round_trip(synthesized):
    _, result = synthesized
    doc = json.loads(result.read_text())
    resp = SystemResponse.from_taps(doc["phi_x"], doc["phi_u"])
    cost = CostOutput(doc["cost"]["C"], doc["cost"]["D"])
    assert fir_l1_norm(cost.apply(resp)) == pytest.approx(doc["norms"]["q_phi"], abs=1e-10)
    assert fir_l1_norm(resp.stacked) == pytest.approx(doc["norms"]["phi"], abs=1e-10)


def test_zero_radius_locality_is_infeasible(tmp_path, capsys):
    data = copy.deepcopy(SMALL)
    data["synthesis"]["locality"] = {"d": 0}
    assert cli.main(["synth", str(write_config(tmp_path, data))]) == 2
    assert "infeasible" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["synth", str(bad)]) == 3
    assert cli.main(["synth", str(tmp_path / "missing.json")]) == 3
    data = copy.deepcopy(SMALL)
    data["synthesis"]["margin"] = 0.5
    assert cli.main(["synth", str(write_config(tmp_path, data))]) == 3
    data = copy.deepcopy(SMALL)
    data["cost"]["D"] = [[1.0]]
    assert cli.main(["synth", str(write_config(tmp_path, data))]) == 3
    data = copy.deepcopy(SMALL)
    data["plant"]["A"] = [[1.0, 2.0], [3.0]]
    assert cli.main(["synth", str(write_config(tmp_path, data))]) == 3
    err = capsys.readouterr().err
    assert err.count("error:") == 5


def test_lp_fault_exit_code(tmp_path, monkeypatch):
    def broken(prob):
        raise LpNumericalError("singular basis")

    monkeypatch.setattr(cli, "bisect_gamma", broken)
    assert cli.main(["synth", str(write_config(tmp_path, SMALL))]) == 4


def test_verify_certified_result(synthesized):
    config, result = synthesized
    assert cli.main(["verify", str(config), str(result)]) == 0
    report = json.loads((result.parent / "verify.json").read_text())
    assert report["min_margin"] > 0 and report["violations"] == 0
    assert report["horizon_check"]["agree"]
    rows = list(csv.reader((result.parent / "gains.csv").open()))
    assert len(rows) == 31
    assert json.loads(result.read_text())["verify"]["samples"] == 30


def test_verify_detects_corrupted_taps(synthesized):
    config, result = synthesized
    doc = json.loads(result.read_text())
    doc["phi_u"][1][0][0] += 0.01
    result.write_text(json.dumps(doc))
    assert cli.main(["verify", str(config), str(result)]) == 5
    assert "residual" in json.loads((result.parent / "verify.json").read_text())["problems"][0]


def test_verify_with_inflated_epsilon(synthesized):
    config, result = synthesized
    data = json.loads(config.read_text())
    data["uncertainty"]["epsilon"] *= 10
    config.write_text(json.dumps(data))
    assert cli.main(["verify", str(config), str(result)]) == 5


def test_simulate_impulse_matches_taps(synthesized):
    config, result = synthesized
    assert cli.main(["simulate", str(config), str(result), "--input", "impulse"]) == 0
    out = result.parent
    rows = list(csv.reader((out / "traces.csv").open()))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    assert header[:4] == ["t", "x0", "x1", "x2"]
    doc = json.loads(result.read_text())
    px = np.array(doc["phi_x"])
    # A unit impulse on every channel returns the row sums of each tap.
    np.testing.assert_allclose(data[1:5, 1:4], px.sum(axis=2), atol=1e-12)
    np.testing.assert_allclose(data[5:, 1:4], 0.0, atol=1e-12)
    ET.parse(out / "traces.svg")


def test_simulate_perturbed_prediction_agrees(synthesized):
    config, result = synthesized
    assert cli.main(["simulate", str(config), str(result), "--input", "step", "--seed", "4"]) == 0
    rows = list(csv.reader((result.parent / "traces.csv").open()))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    x = data[:, [header.index(f"x{i}") for i in range(3)]]
    pred = data[:, [header.index(f"predicted_x{i}") for i in range(3)]]
    np.testing.assert_allclose(x, pred, atol=1e-8)


def test_simulate_from_csv(synthesized, tmp_path):
    config, result = synthesized
    w = np.random.default_rng(0).normal(size=(12, 3))
    path = tmp_path / "w.csv"
    np.savetxt(path, w, delimiter=",", header="w0,w1,w2", comments="")
    assert cli.main(["simulate", str(config), str(result), "--input", str(path)]) == 0
    assert len(list(csv.reader((result.parent / "traces.csv").open()))) == 13
    np.savetxt(path, w[:, :2], delimiter=",")
    assert cli.main(["simulate", str(config), str(result), "--input", str(path)]) == 3


def test_simulate_missing_result(tmp_path):
    config = write_config(tmp_path, SMALL)
    assert cli.main(["simulate", str(config), str(tmp_path / "nope.json")]) == 3


def test_norm_command(synthesized, capsys):
    _, result = synthesized
    assert cli.main(["norm", str(result)]) == 0
    line = capsys.readouterr().out
    assert "< gamma" in line
    doc = json.loads(result.read_text())
    doc["gamma_star"] = doc["norms"]["q_phi"] / 2
    result.write_text(json.dumps(doc))
    assert cli.main(["norm", str(result)]) == 5


def test_runs_are_byte_identical(tmp_path):
    outputs = []
    for run in range(2):
        base = tmp_path / f"run{run}"
        base.mkdir()
        config = write_config(base, SMALL)
        assert cli.main(["synth", str(config)]) == 0
        assert cli.main(["verify", str(config), str(base / "out" / "result.json")]) == 0
        outputs.append([(base / "out" / name).read_bytes() for name in ("result.json", "gains.csv")])
    assert outputs[0] == outputs[1]
