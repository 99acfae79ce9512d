import json
import struct

import numpy as np
import pytest

from stochheat import drift as dm
from stochheat import io
from stochheat.density import run_ensemble
from stochheat.solver import NoiseModel, SolverConfig, solve_path
from stochheat.spectral import SineBasis


@pytest.fixture
def config():
    b = SineBasis(2, 4)
    return SolverConfig(b, NoiseModel.smoothed(b, 0.5), dm.cubic(), T=0.5, M=8, seed=11)


def test_trajectory_cache_roundtrip(tmp_path, config):
    tr = solve_path(config, 3)
    p = io.write_trajectory_cache(tmp_path / "t.bin", tr)
    back = io.load_trajectory(p, config)
    assert back.path_id == 3
    assert np.array_equal(back.states, tr.states) and np.array_equal(back.noise, tr.noise)


def test_cache_rejects_other_config(tmp_path, config):
    p = io.write_trajectory_cache(tmp_path / "t.bin", solve_path(config))
    with pytest.raises(io.FormatError):
        io.load_trajectory(p, config.replace(seed=12))


def test_cache_magic_version_and_truncation(tmp_path, config):
    p = io.write_trajectory_cache(tmp_path / "t.bin", solve_path(config))
    blob = p.read_bytes()
    (tmp_path / "a").write_bytes(b"NOTACACHE" + blob[9:])
    with pytest.raises(io.FormatError, match="not a trajectory"):
        io.read_trajectory_cache(tmp_path / "a")
    bad = bytearray(blob)
    struct.pack_into("<H", bad, len(io.CACHE_MAGIC), 99)
    (tmp_path / "b").write_bytes(bytes(bad))
    with pytest.raises(io.FormatError, match="version"):
        io.read_trajectory_cache(tmp_path / "b")
    (tmp_path / "c").write_bytes(blob[:-8])
    with pytest.raises(io.FormatError, match="truncated"):
        io.read_trajectory_cache(tmp_path / "c")


def test_trajectory_csv_is_exact(tmp_path, config):
    tr = solve_path(config)
    header, data = io.read_table(io.write_trajectory_csv(tmp_path / "t.csv", tr))
    assert header[0] == "time" and header[1] == "c_1_1" and len(header) == 17
    assert np.array_equal(data[:, 1:], tr.states)
    assert np.array_equal(data[:, 0], tr.times)


def test_point_series(tmp_path, config):
    tr = solve_path(config)
    xs = [(1.0, 2.0), (0.5, 0.5)]
    _, data = io.read_table(io.write_point_series(tmp_path / "p.csv", tr, xs))
    assert np.array_equal(data[:, 2], tr.point_series(xs[1]))


def test_ensemble_roundtrip(tmp_path, config):
    ens = run_ensemble(config, 12, [(0.25, (1.0, 1.0)), (0.5, (2.0, 0.3))])
    back = io.read_ensemble(io.write_ensemble(tmp_path / "e.csv", ens))
    assert np.array_equal(back.values, ens.values) and np.array_equal(back.dnorm, ens.dnorm)
    assert back.probes == ens.probes and back.seed == 11 and back.config_hash == ens.config_hash


def test_ensemble_version_is_checked(tmp_path, config):
    p = io.write_ensemble(tmp_path / "e.csv", run_ensemble(config, 2, [(0.5, (1.0, 1.0))], False))
    p.write_text(p.read_text().replace("ensemble v1", "ensemble v7"))
    with pytest.raises(io.FormatError):
        io.read_ensemble(p)


def test_writers_are_byte_identical(tmp_path, config):
    def emit(d):
        tr = solve_path(config, 1)
        io.write_trajectory_csv(d / "t.csv", tr)
        io.write_trajectory_cache(d / "t.bin", tr)
        io.write_summary(d / "s.json", {"b": np.float64(0.1), "a": [np.int64(1), np.True_]})
        return [(d / n).read_bytes() for n in ("t.csv", "t.bin", "s.json")]

    (tmp_path / "1").mkdir()
    (tmp_path / "2").mkdir()
    assert emit(tmp_path / "1") == emit(tmp_path / "2")


def test_summary_and_curve(tmp_path):
    p = io.write_summary(tmp_path / "s.json", {"z": np.inf, "a": np.arange(3)})
    assert json.loads(p.read_text()) == {"a": [0, 1, 2], "z": "inf"}
    x, y = io.read_curve(io.write_curve(tmp_path / "c.txt", np.array([1e-3, 0.5]), np.array([1 / 3, 2.0])))
    assert y[0] == 1 / 3 and x[0] == 1e-3


def test_malliavin_rows(tmp_path):
    p = io.write_malliavin_rows(tmp_path / "m.csv", [(0, 1.0, (1.0, 2.0), 0.5, None),
                                                     (1, 1.0, (1.0, 2.0), 0.4, 0.01)])
    header, data = io.read_table(p)
    assert header == ["path_id", "t", "x_1", "x_2", "norm_sq", "second_norm_sq"]
    assert np.isnan(data[0, -1]) and data[1, -1] == 0.01
