"""Monte Carlo ensembles and estimators for the law of ``u(t, x)``."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.stats
from scipy.stats import binomtest

from .malliavin import malliavin_norms
from .solver import NoiseModel, SolverConfig, draw_noise, g_closed_form, integrate
from .spectral import DomainError, SineBasis


@dataclass(frozen=True)
class Probe:
    t: float
    x: tuple[float, ...]


def _as_probes(probes) -> list[Probe]:
    out = []
    for p in probes:
        if isinstance(p, Probe):
            out.append(p)
        else:
            t, x = p
            out.append(Probe(float(t), tuple(float(v) for v in np.atleast_1d(x))))
    return out


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Per-path records at each probe; failed paths hold NaN."""

    probes: list[Probe]
    values: np.ndarray = field(repr=False)  # (n_paths, n_probes)
    dnorm: np.ndarray | None = field(repr=False)  # same shape, ||Du||^2
    failed: np.ndarray = field(repr=False)
    seed: int = 0
    config_hash: str = ""

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())

    def samples(self, probe: int = 0) -> np.ndarray:
        return self.values[~self.failed, probe]

    def norms(self, probe: int = 0) -> np.ndarray:
        if self.dnorm is None:
            raise ValueError("ensemble was generated without Malliavin norms")
        return self.dnorm[~self.failed, probe]


def _run_batch(args):
    config, ids, probes, with_malliavin = args
    b = config.basis
    Z = np.stack([draw_noise(config.seed, p, config.M, b.size) for p in ids])
    t_idx = [config.time_index(p.t) for p in probes]
    keep = None if with_malliavin else t_idx
    states, failed = integrate(config, Z, keep=keep, path_ids=list(ids), on_blowup="mask")
    if with_malliavin:
        at = states[:, t_idx]
    else:
        slot = {k: i for i, k in enumerate(sorted(set(t_idx)))}
        at = states[:, [slot[k] for k in t_idx]]
    E = np.stack([b.basis_values(p.x) for p in probes])
    vals = np.einsum("pjn,jn->pj", at, E)
    norms = None
    if with_malliavin:
        norms = np.full(vals.shape, np.nan)
        ok = ~failed
        if ok.any():
            for j, (p, n) in enumerate(zip(probes, t_idx)):
                norms[ok, j] = malliavin_norms(config, states[ok], n, p.x)
    return vals, norms, failed


def run_ensemble(config: SolverConfig, n_paths: int, probes, with_malliavin: bool = True,
                 batch_size: int = 512, workers: int = 1) -> Ensemble:
    """Simulate paths ``0..n_paths-1`` and record values at the probes.

    Output does not depend on ``batch_size`` or ``workers``; every path draws
    its own noise stream.  Paths that blow up are counted in ``failed``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    probes = _as_probes(probes)
    if not probes:
        raise ValueError("at least one probe is required")
    for p in probes:
        config.time_index(p.t)
        config.basis.basis_values(p.x)
    batches = [range(i, min(i + batch_size, n_paths)) for i in range(0, n_paths, batch_size)]
    jobs = [(config, list(ids), probes, with_malliavin) for ids in batches]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_batch, jobs))
    else:
        results = [_run_batch(j) for j in jobs]
    vals = np.concatenate([r[0] for r in results])
    failed = np.concatenate([r[2] for r in results])
    norms = np.concatenate([r[1] for r in results]) if with_malliavin else None
    return Ensemble(probes, vals, norms, failed, config.seed, config.config_hash())


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    grid: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    bandwidth: float
    n_paths: int

    @property
    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    @property
    def peak(self) -> float:
        return float(self.density.max())

    def sup_error(self, reference) -> float:
        """``max |p_hat - p|`` on the grid for a reference density callable."""
        return float(np.max(np.abs(self.density - reference(self.grid))))


def kde_samples(samples: np.ndarray, grid: np.ndarray | None = None,
                bw_factor: float | None = None, n_grid: int = 801) -> DensityEstimate:
    """Gaussian KDE, Silverman bandwidth ``1.06 sigma n^(-1/5)`` by default.

    The default grid spans ``mean +- 6 sigma``.
    """
    s = np.asarray(samples, dtype=float)
    s = s[np.isfinite(s)]
    if s.size < 100:
        raise ValueError(f"need at least 100 samples, got {s.size}")
    sd = s.std(ddof=1)
    if not sd > 0:
        raise DomainError("degenerate sample: zero variance")
    if bw_factor is None:
        bw_factor = 1.06 * s.size ** (-0.2)
    if grid is None:
        grid = np.linspace(s.mean() - 6 * sd, s.mean() + 6 * sd, n_grid)
    est = scipy.stats.gaussian_kde(s, bw_method=bw_factor)
    dens = np.maximum(est(grid), 0.0)
    return DensityEstimate(np.asarray(grid, dtype=float), dens, float(bw_factor * sd), s.size)


def kde(ensemble: Ensemble, probe: int = 0, grid: np.ndarray | None = None,
        bw_factor: float | None = None) -> DensityEstimate:
    return kde_samples(ensemble.samples(probe), grid, bw_factor)


def gaussian_reference(variance: float, mean: float = 0.0):
    return scipy.stats.norm(mean, np.sqrt(variance)).pdf


@dataclass(frozen=True, eq=False)
class SmallBallCurve:
    eps: np.ndarray
    prob: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n: int

    def is_monotone(self) -> bool:
        order = np.argsort(self.eps)
        return bool(np.all(np.diff(self.prob[order]) >= 0))


def predicted_exponent(q: float, gamma: float) -> tuple[float, float]:
    """``p = q gamma / (2 - gamma)`` and the resulting small-ball exponent ``p (2/gamma - 1)``."""
    if not 0 < gamma < 2:
        raise DomainError(f"gamma must lie in (0, 2), got {gamma}")
    p = q * gamma / (2.0 - gamma)
    return p, p * (2.0 / gamma - 1.0)


def small_ball_curve(ensemble: Ensemble, probe: int, eps_grid: Sequence[float],
                     confidence: float = 0.95) -> SmallBallCurve:
    """Empirical ``P(||Du||^2 < eps)`` with Wilson intervals."""
    eps = np.asarray(eps_grid, dtype=float)
    if np.any(eps <= 0):
        raise DomainError("eps grid must be positive")
    if eps.size > 1 and np.any(np.diff(eps) >= 0):
        raise DomainError("eps grid must be strictly decreasing")
    norms = np.sort(ensemble.norms(probe))
    n = norms.size
    counts = np.searchsorted(norms, eps, side="left")
    lo, hi = np.empty(eps.size), np.empty(eps.size)
    for i, c in enumerate(counts):
        ci = binomtest(int(c), n).proportion_ci(confidence, method="wilson")
        lo[i], hi[i] = ci.low, ci.high
    return SmallBallCurve(eps, counts / n, lo, hi, n)


@dataclass(frozen=True)
class NegativeMoment:
    q: float
    estimate: float
    trimmed: float
    n: int

    @property
    def relative_change(self) -> float:
        return abs(self.estimate - self.trimmed) / abs(self.estimate)

    @property
    def stable(self) -> bool:
        return bool(np.isfinite(self.estimate)) and self.relative_change <= 0.05


def negative_moment_samples(norms_sq: np.ndarray, q: float, trim: float = 0.001) -> NegativeMoment:
    v = np.asarray(norms_sq, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("no samples")
    if np.any(v <= 0):
        raise DomainError("zero Malliavin norm in sample; negative moments undefined")
    w = v ** (-q / 2.0)
    cut = int(np.floor(trim * v.size))
    kept = np.sort(v)[cut:] ** (-q / 2.0)
    return NegativeMoment(float(q), float(w.mean()), float(kept.mean()), v.size)


def negative_moment(ensemble: Ensemble, probe: int, q: float, trim: float = 0.001) -> NegativeMoment:
    """``E ||Du||^-q`` and its change after dropping the smallest ``trim`` fraction."""
    return negative_moment_samples(ensemble.norms(probe), q, trim)


def _square_sine_coeffs(K: int, J: int) -> np.ndarray:
    """``C[k, j] = (2/pi)^(3/2) int_0^pi sin^2(k y) sin(j y) dy`` for k <= K, j <= J."""
    k = np.arange(1, K + 1)[:, None].astype(float)
    j = np.arange(1, J + 1)[None, :].astype(float)
    odd = (j % 2) == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(odd, 4 * k**2 / (j * (4 * k**2 - j**2)), 0.0)
    return (2.0 / np.pi) ** 1.5 * val


@dataclass(frozen=True, eq=False)
class Remark58Result:
    deltas: np.ndarray
    values: np.ndarray  # NaN where g vanishes
    g: np.ndarray

    @property
    def condition_a_holds(self) -> bool:
        return bool(np.all(self.g > 0))

    @property
    def decreasing(self) -> bool:
        """Values shrink as delta decreases."""
        if not self.condition_a_holds:
            return False
        order = np.argsort(self.deltas)
        return bool(np.all(np.diff(self.values[order]) > 0))


def remark58_check(noise: NoiseModel, x, deltas: Sequence[float], J: int | None = None) -> Remark58Result:
    """``delta / g(x,delta) * int_0^delta int G_s(x,y) g(y,delta) dy ds`` per delta.

    Evaluated in the sine basis: the inner integral is
    ``sum_j (1 - exp(-delta a_j)) / a_j e_j(x) <g(., delta), e_j>`` with the
    coefficients of ``e_k^2`` known in closed form.  ``J`` is the per-axis
    truncation of the outer sum (default: the noise truncation).
    """
    b = noise.basis
    if not np.isclose(b.length, np.pi):
        raise ValueError("remark58_check is implemented for the cube (0, pi)^d")
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0) or np.any(deltas >= 1):
        raise DomainError("delta grid must lie in (0, 1)")
    J = b.K if J is None else int(J)
    outer = SineBasis(b.d, J)
    C = _square_sine_coeffs(b.K, J)
    a_k = b.eigenvalues
    a_j = outer.eigenvalues
    e_j = outer.basis_values(x)
    vals, gs = np.empty(deltas.size), np.empty(deltas.size)
    for i, dlt in enumerate(deltas):
        w = (noise.q * (-np.expm1(-2 * dlt * a_k)) / (2 * a_k)).reshape(b.shape)
        proj = w
        for _ in range(b.d):
            # contract the leading k-axis, append a j-axis at the end
            proj = np.tensordot(proj, C, axes=([0], [0]))
        proj = proj.reshape(outer.size)
        inner = float(np.sum(-np.expm1(-dlt * a_j) / a_j * e_j * proj))
        g = g_closed_form(x, dlt, noise)
        # sin(k x) at nodal points is ~1e-16 rather than 0; compare with the sup bound of g
        if g <= 1e-12 * (2.0 / np.pi) ** b.d * float(np.sum(w)):
            g = 0.0
        gs[i] = g
        vals[i] = dlt * inner / g if g > 0 else np.nan
    return Remark58Result(deltas, vals, gs)
