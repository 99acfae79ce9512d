import json
from pathlib import Path

import numpy as np
import pydantic
import pytest
import yaml

from stochheat.cli import EXIT_INVALID, EXIT_OK, EXIT_SUITE, main
from stochheat.config import effective_yaml, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"domain": {"K": 8, "extra": 2}},
    {"gamma": 2.5},
    {"gamma": 0.0},
    {"drift": {"name": "cubic", "beta": 0.1}},
    {"drift": {"name": "cubic", "variant": "mollified", "lam": 0.1}},
    {"ensemble": {"n_paths": 0}},
    {"noise": {"kind": "smoothed"}},
    {"domain": {"d": 2}},
    {"probes": [{"t": 0.3, "x": [1.0]}]},
    {"probes": [{"t": 1.0, "x": [4.0]}]},
    {"density": {"deltas": [1.5]}},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(pydantic.ValidationError):
        parse_config(data)


@pytest.mark.parametrize("name", ["cubic_d1.yaml", "linear_d1.yaml", "cube_d2.yaml"])
def test_effective_config_roundtrip(name):
    cfg = load_config(CONFIGS / name)
    again = parse_config(yaml.safe_load(effective_yaml(cfg)))
    assert again == cfg
    assert again.solver_config().config_hash() == cfg.solver_config().config_hash()


def test_builders():
    cfg = parse_config({"domain": {"d": 2, "K": 4}, "noise": {"kind": "smoothed", "m_Q": 1.0},
                        "drift": {"name": "cubic_sine"}, "initial": {"kind": "sine", "amplitude": 2}})
    sc = cfg.solver_config(seed=5)
    assert sc.seed == 5 and sc.eta == 1.0 and sc.basis.size == 16
    u0 = sc.u0.coeffs if hasattr(sc.u0, "coeffs") else sc.u0
    assert np.argmax(np.abs(u0)) == 0


def run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path)])


def test_simulate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = str(CONFIGS / "cubic_d1.yaml")
    assert run(a, "simulate", "--config", cfg) == EXIT_OK
    assert run(b, "simulate", "--config", cfg) == EXIT_OK
    for f in ("trajectory.csv", "trajectory.bin", "point_series.csv", "simulate_summary.json",
              "effective_config.yaml"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert run(tmp_path / "c", "simulate", "--config", cfg, "--seed", "8") == EXIT_OK
    assert (tmp_path / "c" / "trajectory.csv").read_bytes() != (a / "trajectory.csv").read_bytes()
    assert "seed: 8" in (tmp_path / "c" / "effective_config.yaml").read_text()


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("gamma: 2.5\n")
    assert run(tmp_path / "o", "simulate", "--config", str(bad)) == EXIT_INVALID
    assert run(tmp_path / "o", "simulate", "--workers", "0") == EXIT_INVALID


def test_verify_exit_codes(tmp_path):
    assert run(tmp_path / "n", "verify", "--suite", "noise") == EXIT_OK
    summary = json.loads((tmp_path / "n" / "verify.json").read_text())
    assert summary["passed"] and summary["suites"] == ["noise"]
    # the drift suite contains the envelope-ratio criterion, which the cubic does not meet
    assert run(tmp_path / "d", "verify", "--suite", "drift") == EXIT_SUITE


def test_gxt_command(tmp_path):
    assert run(tmp_path, "gxt", "--config", str(CONFIGS / "cube_d2.yaml")) == EXIT_OK
    rep = json.loads((tmp_path / "gxt.json").read_text())
    assert len(rep["points"]) == 2
    assert all(p["inf_g_over_t_gamma"] > 0 for p in rep["points"])
    assert all(p["inf_g_over_t_gamma"] >= 0.9 * p["c_x_squared_basis"] for p in rep["points"])


def test_density_and_malliavin_commands(tmp_path):
    cfg = tmp_path / "small.yaml"
    cfg.write_text(yaml.safe_dump({
        "domain": {"K": 8}, "time": {"M": 32}, "drift": {"name": "linear", "a": 1.0},
        "probes": [{"t": 1.0, "x": [1.5]}], "ensemble": {"n_paths": 400}, "gamma": 0.5,
        "malliavin": {"n_paths": 2, "second_order": True}}))
    assert run(tmp_path, "density", "--config", str(cfg)) == EXIT_OK
    s = json.loads((tmp_path / "density_summary.json").read_text())
    p = s["probes"][0]
    assert s["n_paths"] == 400 and p["mass"] > 0.99
    assert p["gaussian_benchmark"]["sup_error_over_peak"] < 0.2
    assert p["predicted"]["p"] == pytest.approx(2 / 3)
    assert (tmp_path / "ensemble.csv").exists() and (tmp_path / "small_ball_0.txt").exists()
    assert run(tmp_path, "malliavin", "--config", str(cfg)) == EXIT_OK
    m = json.loads((tmp_path / "malliavin_summary.json").read_text())
    assert m["rows"] == 2 and m["min_norm_sq"] > 0
