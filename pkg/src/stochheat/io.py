"""File formats: columnar text tables, a binary trajectory cache and JSON summaries.

Every writer is deterministic (fixed float formatting, sorted keys, no
timestamps), so identical inputs produce identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .density import Ensemble, Probe
from .solver import SolverConfig, Trajectory

FLOAT_FMT = "%.17g"
CACHE_MAGIC = b"SHEQTRJ\x00"
CACHE_VERSION = 1
ENSEMBLE_TAG = "stochheat-ensemble"
ENSEMBLE_VERSION = 1


class FormatError(ValueError):
    """File does not match the expected format or version."""


def _write_table(path: Path, header: Sequence[str], rows: np.ndarray, comments: Sequence[str] = ()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {c}" for c in comments] + [",".join(header)]
    body = "\n".join(",".join(FLOAT_FMT % v for v in r) for r in np.atleast_2d(rows))
    path.write_text("\n".join(lines) + "\n" + body + "\n")
    return path


def _read_table(path: Path) -> tuple[list[str], list[str], np.ndarray]:
    comments, header, data = [], None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif header is None:
            header = line.split(",")
        elif line:
            data.append([float(v) for v in line.split(",")])
    if header is None:
        raise FormatError(f"{path}: missing header")
    return comments, header, np.array(data, dtype=float).reshape(-1, len(header))


def write_trajectory_csv(path, traj: Trajectory) -> Path:
    """Columns ``time, c_1, ..., c_N`` with modes in storage order."""
    modes = traj.config.basis.modes
    names = ["time"] + ["c_" + "_".join(map(str, k)) for k in modes]
    rows = np.column_stack([traj.times, traj.states])
    return _write_table(path, names, rows, [f"path_id={traj.path_id}",
                                            f"config_hash={traj.config.config_hash()}"])


def write_point_series(path, traj: Trajectory, points: Sequence) -> Path:
    """Columns ``time, u(t, x_1), ...`` for the given probe points."""
    names = ["time"] + [f"u_{i}" for i in range(len(points))]
    cols = [traj.times] + [traj.point_series(x) for x in points]
    comments = [f"x_{i}={list(map(float, np.atleast_1d(x)))}" for i, x in enumerate(points)]
    return _write_table(path, names, np.column_stack(cols), comments)


def read_table(path) -> tuple[list[str], np.ndarray]:
    _, header, data = _read_table(path)
    return header, data


def write_trajectory_cache(path, traj: Trajectory) -> Path:
    """Binary cache: magic, version, JSON header, then states and noise (float64, little endian)."""
    header = json.dumps({
        "config": traj.config.describe(), "config_hash": traj.config.config_hash(),
        "path_id": traj.path_id, "states_shape": list(traj.states.shape),
        "noise_shape": list(traj.noise.shape),
    }, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<HI", CACHE_VERSION, len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(traj.noise, dtype="<f8").tobytes())
    return path


def read_trajectory_cache(path) -> tuple[dict, np.ndarray, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[: len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise FormatError(f"{path}: not a trajectory cache")
    off = len(CACHE_MAGIC)
    version, hlen = struct.unpack_from("<HI", blob, off)
    if version != CACHE_VERSION:
        raise FormatError(f"{path}: unsupported cache version {version}")
    off += struct.calcsize("<HI")
    header = json.loads(blob[off: off + hlen])
    off += hlen
    n_s = int(np.prod(header["states_shape"]))
    n_z = int(np.prod(header["noise_shape"]))
    if len(blob) - off != 8 * (n_s + n_z):
        raise FormatError(f"{path}: truncated payload")
    arr = np.frombuffer(blob, dtype="<f8", offset=off)
    states = arr[:n_s].reshape(header["states_shape"]).copy()
    noise = arr[n_s:].reshape(header["noise_shape"]).copy()
    return header, states, noise


def load_trajectory(path, config: SolverConfig) -> Trajectory:
    """Rebuild a Trajectory; the cache must come from an identical config."""
    header, states, noise = read_trajectory_cache(path)
    if header["config_hash"] != config.config_hash():
        raise FormatError(f"{path}: cache was written for a different configuration")
    return Trajectory(config, states, noise, int(header["path_id"]))


def write_malliavin_rows(path, rows: Sequence[tuple]) -> Path:
    """Rows ``(path_id, t, x_1..x_d, norm_sq, second_norm_sq)``; missing second norm is NaN."""
    rows = [tuple(r) for r in rows]
    d = len(np.atleast_1d(rows[0][2])) if rows else 1
    names = ["path_id", "t"] + [f"x_{i + 1}" for i in range(d)] + ["norm_sq", "second_norm_sq"]
    data = []
    for r in rows:
        second = r[4] if len(r) > 4 and r[4] is not None else np.nan
        data.append([r[0], r[1], *np.atleast_1d(r[2]), r[3], second])
    return _write_table(path, names, np.array(data, dtype=float).reshape(-1, len(names)))


def write_ensemble(path, ens: Ensemble) -> Path:
    """Versioned columnar file: one row per path, value and norm per probe."""
    names = ["path_id", "failed"]
    cols = [np.arange(ens.n_paths), ens.failed.astype(float)]
    for j in range(len(ens.probes)):
        names.append(f"u_{j}")
        cols.append(ens.values[:, j])
        if ens.dnorm is not None:
            names.append(f"norm_sq_{j}")
            cols.append(ens.dnorm[:, j])
    probes = json.dumps([[p.t, list(p.x)] for p in ens.probes])
    comments = [f"{ENSEMBLE_TAG} v{ENSEMBLE_VERSION}", f"seed={ens.seed}",
                f"config_hash={ens.config_hash}", f"probes={probes}"]
    return _write_table(path, names, np.column_stack(cols), comments)


def read_ensemble(path) -> Ensemble:
    comments, header, data = _read_table(path)
    if not comments or comments[0] != f"{ENSEMBLE_TAG} v{ENSEMBLE_VERSION}":
        raise FormatError(f"{path}: not a v{ENSEMBLE_VERSION} ensemble file")
    meta = dict(c.split("=", 1) for c in comments[1:])
    probes = [Probe(float(t), tuple(x)) for t, x in json.loads(meta["probes"])]
    col = {name: data[:, i] for i, name in enumerate(header)}
    values = np.column_stack([col[f"u_{j}"] for j in range(len(probes))])
    dnorm = None
    if "norm_sq_0" in col:
        dnorm = np.column_stack([col[f"norm_sq_{j}"] for j in range(len(probes))])
    return Ensemble(probes, values, dnorm, col["failed"].astype(bool), int(meta["seed"]),
                    meta["config_hash"])


def write_curve(path, x: np.ndarray, y: np.ndarray, names=("x", "y")) -> Path:
    """Plot-ready two-column text file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {names[0]} {names[1]}"]
    lines += [f"{FLOAT_FMT % a} {FLOAT_FMT % b}" for a, b in zip(np.ravel(x), np.ravel(y))]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_curve(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, comments="#", ndmin=2)
    return data[:, 0], data[:, 1]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def write_summary(path, summary: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return path
