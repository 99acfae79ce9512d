"""Command-line entry point: ``stochheat <command> --config FILE``.

Exit codes: 0 ok, 1 invalid input, 2 numerical failure, 3 invariant suite failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pydantic

from . import io
from .config import ExperimentConfig, effective_yaml, load_config, parse_config
from .density import (kde, negative_moment, predicted_exponent, remark58_check, run_ensemble,
                      small_ball_curve, gaussian_reference)
from .drift import ResolventError
from .malliavin import malliavin_norm_adjoint, second_malliavin_norm
from .solver import (BlowUpError, affine_law, cube_lower_constant, g_closed_form,
                     g_lower_bound_check, solve_path)
from .spectral import DomainError
from .suites import SUITES, run_suite

log = logging.getLogger("stochheat")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_SUITE = 0, 1, 2, 3


class UsageError(ValueError):
    pass


def _prepare(args) -> tuple[ExperimentConfig, Path]:
    if args.config is None:
        cfg = parse_config({})
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
        cfg = parse_config(cfg.model_dump(mode="json"))
    out = Path(args.out if args.out is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.yaml").write_text(effective_yaml(cfg))
    return cfg, out


def _probes(cfg: ExperimentConfig):
    probes = cfg.probe_list()
    if not probes:
        mid = tuple([cfg.domain.length / 2] * cfg.domain.d)
        probes = [(cfg.time.T, mid)]
    return probes


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> int:
    sc = cfg.solver_config()
    traj = solve_path(sc, 0)
    xs = [x for _, x in _probes(cfg)]
    io.write_trajectory_csv(out / "trajectory.csv", traj)
    io.write_point_series(out / "point_series.csv", traj, xs)
    io.write_trajectory_cache(out / "trajectory.bin", traj)
    io.write_summary(out / "simulate_summary.json", {
        "command": "simulate", "config_hash": sc.config_hash(), "seed": sc.seed,
        "final_sup": float(np.max(np.abs(traj.grid_values()[-1]))),
        "probes": [{"x": list(x), "u_T": traj.point_series(x)[-1]} for x in xs],
    })
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path, args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    lines, ok = [], True
    for name in names:
        for chk in run_suite(name):
            line = f"[{name}] {chk.line()}"
            print(line)
            lines.append({"suite": name, "name": chk.name, "value": chk.value,
                          "bound": chk.bound, "relation": chk.relation, "passed": chk.passed})
            ok &= chk.passed
    io.write_summary(out / "verify.json", {"command": "verify", "suites": names,
                                           "passed": ok, "checks": lines})
    return EXIT_OK if ok else EXIT_SUITE


def cmd_gxt(cfg: ExperimentConfig, out: Path, args) -> int:
    sc = cfg.solver_config()
    ts = cfg.gxt.t_grid.values()
    points = [tuple(x) for x in cfg.gxt.x] or [x for _, x in _probes(cfg)]
    gamma = cfg.gamma if cfg.gamma is not None else 1.0
    rows, report = [], []
    for x in points:
        g = np.array([g_closed_form(x, t, sc.noise) for t in ts])
        for t, gv in zip(ts, g):
            rows.append([*x, t, gv, gv / t**gamma])
        entry = {"x": list(x), "gamma": gamma,
                 "inf_g_over_t_gamma": g_lower_bound_check(x, gamma, sc.noise, ts)}
        if sc.noise.kind == "smoothed" and sc.basis.length == np.pi:
            q1 = float((1.0 + sc.basis.d) ** (-2.0 * sc.noise.m_Q))
            entry["c_x_reference"] = cube_lower_constant(x, 1.0, q1)
            entry["c_x_squared_basis"] = cube_lower_constant(x, 1.0, q1, squared=True)
        report.append(entry)
    names = [f"x_{i + 1}" for i in range(sc.basis.d)] + ["t", "g", "g_over_t_gamma"]
    io._write_table(out / "gxt.csv", names, np.array(rows))
    io.write_summary(out / "gxt.json", {"command": "gxt", "points": report})
    return EXIT_OK


def cmd_density(cfg: ExperimentConfig, out: Path, args) -> int:
    sc = cfg.solver_config()
    probes = _probes(cfg)
    ens = run_ensemble(sc, cfg.ensemble.n_paths, probes, with_malliavin=cfg.ensemble.malliavin,
                       batch_size=cfg.ensemble.batch_size, workers=args.workers)
    io.write_ensemble(out / "ensemble.csv", ens)
    summary = {"command": "density", "n_paths": ens.n_paths, "n_failed": ens.n_failed,
               "config_hash": sc.config_hash(), "probes": []}
    for j, (t, x) in enumerate(probes):
        entry = {"t": t, "x": list(x)}
        est = kde(ens, j)
        io.write_curve(out / f"kde_{j}.txt", est.grid, est.density, ("u", "density"))
        entry.update(bandwidth=est.bandwidth, mass=est.mass, peak=est.peak)
        law = affine_law(sc, t, x)
        if law is not None:
            ref = gaussian_reference(law[1], law[0])
            entry["gaussian_benchmark"] = {"mean": law[0], "variance": law[1],
                                           "sup_error": est.sup_error(ref),
                                           "sup_error_over_peak": est.sup_error(ref) / ref(law[0])}
        if cfg.ensemble.malliavin:
            eps = sorted(cfg.density.eps_grid, reverse=True)
            sb = small_ball_curve(ens, j, eps)
            io.write_curve(out / f"small_ball_{j}.txt", sb.eps, sb.prob, ("eps", "probability"))
            nm = negative_moment(ens, j, cfg.density.moment_q)
            entry["small_ball"] = {"eps": sb.eps, "prob": sb.prob, "wilson_low": sb.lower,
                                   "wilson_high": sb.upper}
            entry["negative_moment"] = {"q": nm.q, "estimate": nm.estimate, "trimmed": nm.trimmed,
                                        "relative_change": nm.relative_change, "stable": nm.stable}
            if cfg.gamma is not None:
                p, expo = predicted_exponent(cfg.density.moment_q, cfg.gamma)
                entry["predicted"] = {"p": p, "small_ball_exponent": expo}
        if sc.basis.length == np.pi:
            r = remark58_check(sc.noise, x, cfg.density.deltas)
            io.write_curve(out / f"remark58_{j}.txt", r.deltas, r.values, ("delta", "value"))
            entry["remark58"] = {"deltas": r.deltas, "values": r.values,
                                 "condition_a_holds": r.condition_a_holds, "decreasing": r.decreasing}
        summary["probes"].append(entry)
    io.write_summary(out / "density_summary.json", summary)
    return EXIT_OK


def cmd_malliavin(cfg: ExperimentConfig, out: Path, args) -> int:
    sc = cfg.solver_config()
    probes = _probes(cfg)
    rows = []
    for p in range(cfg.malliavin.n_paths):
        traj = solve_path(sc, p)
        for t, x in probes:
            n1 = malliavin_norm_adjoint(traj, t, x)
            n2 = second_malliavin_norm(traj, t, x) if cfg.malliavin.second_order else None
            rows.append((p, t, x, n1, n2))
    io.write_malliavin_rows(out / "malliavin.csv", rows)
    norms = np.array([r[3] for r in rows])
    io.write_summary(out / "malliavin_summary.json", {"command": "malliavin", "rows": len(rows),
                                            "min_norm_sq": norms.min(), "max_norm_sq": norms.max()})
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify, "gxt": cmd_gxt,
            "density": cmd_density, "malliavin": cmd_malliavin}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochheat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="overrides the seed in the file")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1)
        if name == "verify":
            p.add_argument("--suite", default="all", choices=sorted(SUITES) + ["all"])
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg, out = _prepare(args)
        return COMMANDS[args.command](cfg, out, args)
    except pydantic.ValidationError as exc:
        log.error("invalid configuration:\n%s", exc)
        return EXIT_INVALID
    except (BlowUpError, ResolventError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (DomainError, UsageError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
