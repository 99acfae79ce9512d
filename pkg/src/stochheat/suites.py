"""Invariant suites behind ``stochheat verify``.

Each suite returns a list of CheckResult, one per invariant, with the
measured value next to the bound it is compared with.  Sizes default to
values that run in seconds; the acceptance tests call the same functions
at their stated sizes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import drift as dm
from .malliavin import (coefficient_path, evolution_kernel, kernel_check_tolerance,
                        malliavin_fd_check, malliavin_norm_adjoint, malliavin_norm_forward,
                        malliavin_norms)
from .solver import (NoiseModel, SolverConfig, covariance_selftest, draw_noise, g_closed_form,
                     integrate, solve_path)
from .spectral import (SineBasis, heat_kernel, kernel_mass, kernel_tail_bound, mass_tail_bound,
                       min_kernel_time)


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    bound: float
    passed: bool
    relation: str = "<="

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: measured={self.value:.6g} {self.relation} bound={self.bound:.6g}"


def _le(name, value, bound):
    return CheckResult(name, float(value), float(bound), bool(value <= bound), "<=")


def _ge(name, value, bound):
    return CheckResult(name, float(value), float(bound), bool(value >= bound), ">=")


YOSIDA_LAMBDAS = (1.0, 0.1, 0.01)
LAMBDA_LADDER = (1.0, 0.3, 0.1, 0.03, 0.01)


def _drift_catalog():
    return [dm.cubic(), dm.cubic_plus_linear(), dm.linear(2.0)]


def drift_suite(n_pairs: int = 10_000, n_grid: int = 1000, y_max: float = 10.0,
                seed: int = 0) -> list[CheckResult]:
    """Resolvent accuracy, contraction, Lipschitz, domination, monotone convergence."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(-y_max, y_max, n_grid)
    y1 = rng.uniform(-y_max, y_max, n_pairs)
    y2 = rng.uniform(-y_max, y_max, n_pairs)
    out = []
    for f in _drift_catalog():
        for lam in YOSIDA_LAMBDAS:
            rd = dm.RegularizedDrift(f, lam)
            tol = rd.newton.tol
            tag = f"{f.name} lam={lam}"
            ys = np.concatenate([grid, y1, y2])
            J = dm.resolvent(rd, ys)
            res = np.max(np.abs(J + lam * f(J) - ys))
            out.append(_le(f"resolvent residual [{tag}]", res, 1e-12))

            J1, J2 = dm.resolvent(rd, y1), dm.resolvent(rd, y2)
            slack = 2 * tol * np.maximum(1, np.maximum(abs(y1), abs(y2)))
            excess = np.max(np.abs(J1 - J2) - np.abs(y1 - y2) - slack)
            out.append(_le(f"contraction excess [{tag}]", excess, 0.0))

            F1, F2 = (y1 - J1) / lam, (y2 - J2) / lam
            excess = np.max(np.abs(F1 - F2) - np.abs(y1 - y2) / lam - 2 * slack / lam)
            out.append(_le(f"1/lam-Lipschitz excess [{tag}]", excess, 0.0))

            fl = dm.yosida(rd, grid)
            excess = np.max(np.abs(fl) - np.abs(f(grid)) - 4 * tol * np.maximum(1, abs(grid)) / lam)
            out.append(_le(f"|f_lam| <= |f| excess [{tag}]", excess, 0.0))

            d1 = dm.yosida_d1(rd, grid)
            out.append(_ge(f"min f_lam' [{tag}]", d1.min(), 0.0))

        errs = np.stack([np.abs(dm.yosida(dm.RegularizedDrift(f, lam), grid) - f(grid))
                         for lam in LAMBDA_LADDER])
        rise = np.max(np.diff(errs, axis=0) - 1e-12 * np.maximum(1, np.abs(f(grid))))
        out.append(_le(f"lambda-ladder error increase [{f.name}]", rise, 0.0))
    return out


def derivative_suite(y_max: float = 5.0, n_grid: int = 201, h: float = 1e-5) -> list[CheckResult]:
    """Yosida derivative recursion vs nested central differences, growth envelopes."""
    f = dm.cubic()
    grid = np.linspace(-y_max, y_max, n_grid)
    out = []
    for lam in YOSIDA_LAMBDAS:
        rd = dm.RegularizedDrift(f, lam)
        for n in (1, 2, 3):
            an = dm.yosida_dn(rd, n, grid)
            fd = (dm.yosida_dn(rd, n - 1, grid + h) - dm.yosida_dn(rd, n - 1, grid - h)) / (2 * h)
            rel = np.max(np.abs(fd - an)) / np.max(np.abs(an))
            out.append(_le(f"yosida_dn n={n} vs FD [lam={lam}]", rel, 1e-4))
    envs = [dm.growth_envelope(lambda y, n, r=dm.RegularizedDrift(f, lam): r(y, n), 2, grid, 1.0)
            for lam in YOSIDA_LAMBDAS]
    out.append(_le("n=2 q=1 envelope ratio across lambda", max(envs) / min(envs), 2.0))
    for n, q in ((1, 2.0), (2, 1.0)):
        env_f = dm.growth_envelope(f, n, grid, q)
        worst = max(dm.growth_envelope(lambda y, k, r=dm.RegularizedDrift(f, lam): r(y, k), n, grid, q)
                    for lam in YOSIDA_LAMBDAS)
        out.append(_le(f"n={n} envelope of f_lam vs f", worst, env_f * (1 + 1e-12)))
    return out


def noise_suite(n_samples: int = 100_000, n_tuples: int = 10, seed: int = 0) -> list[CheckResult]:
    """Covariance identity ``E[W_h(s) W_g(t)] = min(s,t) <Qh, g>`` on random tuples."""
    rng = np.random.default_rng(seed)
    b = SineBasis(1, 16)
    noise = NoiseModel.smoothed(b, 0.25)
    out = []
    for i in range(n_tuples):
        h, g = rng.standard_normal(b.size), rng.standard_normal(b.size)
        s, t = rng.uniform(0.05, 1.0, 2)
        chk = covariance_selftest(h, g, s, t, noise, n_samples, seed=seed * 1000 + i)
        z = abs(chk.empirical - chk.exact) / chk.stderr
        out.append(_le(f"covariance tuple {i} |z|", z, 4.0))
    return out


def malliavin_suite(K: int = 8, M: int = 64, n_paths: int = 3, seed: int = 0) -> list[CheckResult]:
    """Adjoint/forward agreement, finite differences, linear-case identity, domination."""
    b = SineBasis(1, K)
    noise = NoiseModel.identity(b)
    cfg = SolverConfig(b, noise, dm.cubic(), T=1.0, M=M, seed=seed)
    x = (np.pi / 2,)
    out = []
    worst = 0.0
    for p in range(n_paths):
        for xx in (x, (0.7,)):
            tr = solve_path(cfg, p)
            a, f = malliavin_norm_adjoint(tr, 1.0, xx), malliavin_norm_forward(tr, 1.0, xx)
            worst = max(worst, abs(a - f) / abs(f))
    out.append(_le("adjoint vs forward relative", worst, 1e-8))
    out.append(_le("finite difference relative (h=1e-5)",
                   malliavin_fd_check(cfg, 1.0, x, 1e-5).max_rel_error, 1e-3))
    hs = np.array([4e-2, 2e-2, 1e-2, 5e-3])
    errs = np.array([malliavin_fd_check(cfg, 1.0, x, h).max_rel_error for h in hs])
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    out.append(_ge("finite difference order on h-ladder", order, 1.8))
    zero = cfg.replace(drift=dm.CATALOG["zero"]())
    val = malliavin_norm_adjoint(solve_path(zero), 1.0, x)
    g = g_closed_form(x, 1.0, noise)
    out.append(_le("f=0 norm vs g relative", abs(val - g) / g, 1e-10))
    tr = solve_path(cfg)
    out.append(_le("domination ||Du||^2 / g", malliavin_norm_adjoint(tr, 1.0, x) / g, 1 + 1e-6))
    return out


def domination_suite(n_paths: int = 1000, K: int = 16, M: int = 64, seed: int = 0,
                     points=((np.pi / 2,), (0.7,))) -> list[CheckResult]:
    """``0 < ||Du(t,x)||^2 <= g(x,t)`` on every sampled path."""
    b = SineBasis(1, K)
    noise = NoiseModel.identity(b)
    cfg = SolverConfig(b, noise, dm.cubic(), T=1.0, M=M, seed=seed)
    out = []
    ratios = {x: [] for x in points}
    mins = {x: [] for x in points}
    for start in range(0, n_paths, 250):
        ids = list(range(start, min(start + 250, n_paths)))
        Z = np.stack([draw_noise(seed, p, M, b.size) for p in ids])
        states, _ = integrate(cfg, Z, path_ids=ids)
        for x in points:
            for t in (0.5, 1.0):
                v = malliavin_norms(cfg, states, cfg.time_index(t), x)
                ratios[x].append(np.max(v / g_closed_form(x, t, noise)))
                mins[x].append(np.min(v))
    for x in points:
        out.append(_le(f"max ||Du||^2/g at x={x[0]:.4f}", max(ratios[x]), 1 + 1e-6))
        out.append(CheckResult(f"min ||Du||^2 at x={x[0]:.4f}", min(mins[x]), 0.0,
                               min(mins[x]) > 0.0, ">"))
    return out


def kernel_suite(n_paths: int = 10, K: int = 8, M: int = 64, seed: int = 0) -> list[CheckResult]:
    """Heat kernel symmetry and mass, evolution-kernel positivity and comparison."""
    out = []
    rng = np.random.default_rng(seed)
    b = SineBasis(1, 32)
    xs = rng.uniform(0.05, np.pi - 0.05, (20, 2))
    asym = max(abs(heat_kernel(0.1, (x,), (y,), b) - heat_kernel(0.1, (y,), (x,), b)) for x, y in xs)
    out.append(_le("heat kernel asymmetry", asym, 0.0))
    for Kl in (8, 16, 32):
        bb = SineBasis(1, Kl)
        t = min_kernel_time(bb)
        eps = mass_tail_bound(t, bb)
        worst = max(kernel_mass(t, (x,), bb) for x in bb.grid_1d)
        out.append(_le(f"kernel mass at t_min, K={Kl}", worst, 1 + eps))

    b = SineBasis(1, K)
    cfg = SolverConfig(b, NoiseModel.identity(b), dm.cubic(), T=1.0, M=M, seed=seed)
    pairs = [(0, M), (M // 4, M // 2), (M // 2, M), (10, 20)]
    pos, comp, sup, skipped = [], [], [], 0
    for p in range(n_paths):
        cp = coefficient_path(solve_path(cfg, p))
        for s, t in pairs:
            rep = evolution_kernel(cp, s, t).check()
            if rep.skipped:
                skipped += 1
                continue
            pos.append(rep.min_kernel + rep.eps)
            comp.append(rep.max_excess - rep.eps)
            sup.append(rep.sup_abs)
    out.append(_ge(f"min kernel + eps_K (K={K})", min(pos), 0.0))
    out.append(_le(f"max (k - G) - eps_K (K={K})", max(comp), 0.0))
    out.append(_le("max |kernel| finite", max(sup), np.inf))

    tau, fsup = 0.25, 3.0
    eps = [kernel_check_tolerance(SineBasis(1, Kl), tau, fsup) for Kl in (4, 8, 16)]
    out.append(_le("eps_K ratio K=8/K=4", eps[1] / eps[0], 1.0 - 1e-12))
    out.append(_le("eps_K ratio K=16/K=8", eps[2] / eps[1], 1.0 - 1e-12))

    # constant potential commutes with the Laplacian
    from .malliavin import CoefficientPath
    cpc = CoefficientPath(b, np.full((M, b.size), 2.0), 1.0 / M)
    U = evolution_kernel(cpc, 0, M // 2).matrix
    S = np.diag(np.exp(-(0.5) * (b.eigenvalues + 2.0)))
    out.append(_le("constant potential vs exp(-c t) S(t)", np.max(np.abs(U - S)), 1e-12))
    out.append(_le("heat tail bound at t=0.25, K=8", kernel_tail_bound(0.25, b), 1e-3))
    return out


def convergence_suite(n_seeds: int = 10, K: int = 16, M: int = 64,
                      lambdas=(0.5, 0.1, 0.02), betas=(0.3, 0.1, 0.03)) -> list[CheckResult]:
    """Common-noise distances ``u_lam -> u`` and ``u_lam,beta -> u_lam`` decrease."""
    b = SineBasis(1, K)
    noise = NoiseModel.identity(b)
    worst_l, worst_b = -np.inf, -np.inf
    for seed in range(n_seeds):
        base = SolverConfig(b, noise, dm.cubic(), T=1.0, M=M, seed=seed)
        u = solve_path(base).grid_values()
        dl = [np.abs(solve_path(base.replace(lam=l)).grid_values() - u).max() for l in lambdas]
        ul = solve_path(base.replace(lam=0.1)).grid_values()
        db = [np.abs(solve_path(base.replace(lam=0.1, beta=be)).grid_values() - ul).max()
              for be in betas]
        worst_l = max(worst_l, max(dl[i + 1] / dl[i] for i in range(len(dl) - 1)))
        worst_b = max(worst_b, max(db[i + 1] / db[i] for i in range(len(db) - 1)))
    return [_le("worst successive ratio |u_lam - u| across lambda", worst_l, 1.0 - 1e-12),
            _le("worst successive ratio |u_lam,beta - u_lam| across beta", worst_b, 1.0 - 1e-12)]


SUITES = {
    "drift": lambda: drift_suite() + derivative_suite(),
    "kernels": kernel_suite,
    "noise": noise_suite,
    "malliavin": lambda: malliavin_suite() + domination_suite(n_paths=200),
    "convergence": lambda: convergence_suite(n_seeds=3),
}


def run_suite(name: str) -> list[CheckResult]:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
