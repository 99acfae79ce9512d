"""Exponential-Euler integration of the truncated mild equation.

Per mode ``k`` with ``a = |k|^2`` and step ``dt``::

    c_k <- exp(-a dt) c_k + phi_k (eta u - f(u))_k + xi_k
    phi_k = (1 - exp(-a dt)) / a
    xi_k ~ N(0, q_k (1 - exp(-2 a dt)) / (2 a))

The nonlinear term is evaluated pointwise on the collocation grid and
transformed back.  ``xi`` is the exact one-step stochastic convolution, so
for ``f = 0`` the scheme samples the law of the solution exactly.

Noise is drawn from a counter-based (Philox) stream keyed by
``(seed, path_id)``; each path always sees the same ``(M, K^d)`` block of
standard normals regardless of how paths are batched or scheduled.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .drift import DriftFunction, NewtonSettings, RegularizedDrift
from .spectral import DomainError, SineBasis, SpectralField


class BlowUpError(FloatingPointError):
    """Non-finite state produced during time stepping."""

    def __init__(self, step: int, mode: int, path: int | None = None):
        where = "" if path is None else f" on path {path}"
        super().__init__(f"non-finite value at step {step}, mode index {mode}{where}")
        self.step, self.mode, self.path = step, mode, path


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Diagonal covariance ``Q`` on the sine basis, ``B = Q^(1/2)``."""

    basis: SineBasis
    q: np.ndarray = field(repr=False)
    kind: str = "custom"
    m_Q: float | None = None

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.shape != (self.basis.size,):
            raise ValueError(f"need {self.basis.size} eigenvalues, got {q.shape}")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("covariance eigenvalues must be finite and >= 0")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls, basis: SineBasis) -> "NoiseModel":
        if basis.d != 1:
            raise ValueError("identity (space-time white) noise is only supported for d = 1")
        return cls(basis, np.ones(basis.size), "identity")

    @classmethod
    def smoothed(cls, basis: SineBasis, m_Q: float) -> "NoiseModel":
        """``Q = (I - Laplacian)^(-2 m_Q)``, i.e. ``B = (I - Laplacian)^(-m_Q)``."""
        if m_Q < 0:
            raise ValueError("m_Q must be >= 0")
        q = (1.0 + basis.eigenvalues) ** (-2.0 * m_Q)
        return cls(basis, q, "smoothed", float(m_Q))

    @classmethod
    def custom(cls, basis: SineBasis, q: Sequence[float]) -> "NoiseModel":
        return cls(basis, np.asarray(q, dtype=float), "custom")

    @property
    def b(self) -> np.ndarray:
        return np.sqrt(self.q)

    def trace_condition_holds(self) -> bool:
        """Whether ``sum q_k |k|^-2`` converges for the untruncated model."""
        if self.kind == "smoothed":
            return self.m_Q > self.basis.d / 2 - 1
        if self.kind == "identity":
            return self.basis.d == 1
        return True

    def with_basis(self, basis: SineBasis) -> "NoiseModel":
        """Same noise family on a different truncation."""
        if self.kind == "identity":
            return NoiseModel.identity(basis)
        if self.kind == "smoothed":
            return NoiseModel.smoothed(basis, self.m_Q)
        raise ValueError("custom noise cannot be re-truncated")


@dataclass(frozen=True)
class StochasticConvolutionSampler:
    """One-step variances of the stochastic convolution per mode."""

    noise: NoiseModel
    dt: float

    @cached_property
    def variance(self) -> np.ndarray:
        a = self.noise.basis.eigenvalues
        return self.noise.q * (-np.expm1(-2.0 * a * self.dt)) / (2.0 * a)

    @cached_property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def path_generator(seed: int, path_id: int) -> np.random.Generator:
    """Counter-based stream for one path, independent of scheduling."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path_id),))
    return np.random.Generator(np.random.Philox(ss))


def draw_noise(seed: int, path_id: int, M: int, n_modes: int) -> np.ndarray:
    """Standard normals ``(M, n_modes)``; row ``n`` drives step ``n``."""
    return path_generator(seed, path_id).standard_normal((M, n_modes))


def coarsen_noise(Z: np.ndarray, noise: NoiseModel, dt_fine: float, factor: int = 2) -> np.ndarray:
    """Standardized increments for step ``factor*dt_fine`` built from fine ones.

    Uses the exact composition of stochastic convolutions over consecutive
    sub-steps, so fine and coarse runs are driven by the same Brownian path.
    """
    M_fine, n = Z.shape
    if M_fine % factor:
        raise ValueError("number of fine steps must be divisible by factor")
    a = noise.basis.eigenvalues
    fine = StochasticConvolutionSampler(noise, dt_fine).std
    coarse = StochasticConvolutionSampler(noise, factor * dt_fine).std
    Zr = Z.reshape(M_fine // factor, factor, n)
    acc = np.zeros((M_fine // factor, n))
    for j in range(factor):
        acc += np.exp(-a * dt_fine * (factor - 1 - j)) * fine * Zr[:, j]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(coarse > 0, acc / np.where(coarse > 0, coarse, 1.0), 0.0)
    return out


@dataclass(frozen=True, eq=False)
class SolverConfig:
    """Everything needed to reproduce a trajectory.

    ``lam`` selects the Yosida variant, ``lam`` with ``beta`` the mollified
    one; neither means the exact drift.  ``u0`` may be a SpectralField or a
    callable evaluated on the collocation grid.
    """

    basis: SineBasis
    noise: NoiseModel
    drift: DriftFunction
    T: float = 1.0
    M: int = 64
    eta: float = 0.0
    u0: SpectralField | Callable | None = None
    seed: int = 0
    lam: float | None = None
    beta: float | None = None
    dealias: bool = False
    newton_tol: float = 1e-14

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be > 0")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.beta is not None and self.lam is None:
            raise ValueError("beta requires lam")
        if self.noise.basis != self.basis:
            raise ValueError("noise model is defined on a different basis")
        u0 = self.u0
        if u0 is None:
            u0 = SpectralField.zeros(self.basis)
        elif callable(u0) and not isinstance(u0, SpectralField):
            u0 = self.basis.project(u0)
        if u0.basis != self.basis:
            raise ValueError("u0 lives on a different basis")
        object.__setattr__(self, "u0", u0)

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt

    @property
    def variant(self) -> str:
        if self.lam is None:
            return "exact"
        return "yosida" if self.beta is None else "mollified"

    @cached_property
    def evaluator(self) -> DriftFunction | RegularizedDrift:
        """Callable ``(y, n) -> f^(n)(y)`` for the configured variant."""
        if self.lam is None:
            return self.drift
        return RegularizedDrift(self.drift, self.lam, self.beta, NewtonSettings(tol=self.newton_tol))

    @cached_property
    def sampler(self) -> StochasticConvolutionSampler:
        return StochasticConvolutionSampler(self.noise, self.dt)

    @cached_property
    def decay(self) -> np.ndarray:
        return np.exp(-self.basis.eigenvalues * self.dt)

    @cached_property
    def phi(self) -> np.ndarray:
        a = self.basis.eigenvalues
        return -np.expm1(-a * self.dt) / a

    @cached_property
    def dealias_mask(self) -> np.ndarray | None:
        if not self.dealias:
            return None
        cut = 2 * self.basis.K / 3
        return np.all(self.basis.modes <= cut, axis=1).astype(float)

    def time_index(self, t: float) -> int:
        n = t / self.dt
        idx = int(round(n))
        if abs(n - idx) > 1e-9 or not 0 <= idx <= self.M:
            raise DomainError(f"t={t} is not on the time grid (dt={self.dt})")
        return idx

    def replace(self, **changes) -> "SolverConfig":
        from dataclasses import replace

        return replace(self, **changes)

    def describe(self) -> dict:
        """JSON-friendly summary, also used for hashing."""
        return {
            "d": self.basis.d, "K": self.basis.K, "length": self.basis.length,
            "T": self.T, "M": self.M, "eta": self.eta, "seed": self.seed,
            "drift": self.drift.name, "lam": self.lam, "beta": self.beta,
            "noise": self.noise.kind, "m_Q": self.noise.m_Q,
            "q_digest": hashlib.sha256(self.noise.q.tobytes()).hexdigest()[:16],
            "u0_digest": hashlib.sha256(self.u0.coeffs.tobytes()).hexdigest()[:16],
            "dealias": self.dealias, "newton_tol": self.newton_tol,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def nonlinear_term(config: SolverConfig, coeffs: np.ndarray) -> np.ndarray:
    """Spectral coefficients of ``eta u - f(u)`` via collocation."""
    if config.eta == 0 and config.drift.vanishes:
        return np.zeros_like(coeffs)
    u = config.basis.to_grid(coeffs)
    nl = config.basis.from_grid(config.eta * u - config.evaluator(u, 0))
    if config.dealias_mask is not None:
        nl = nl * config.dealias_mask
    return nl


def step(config: SolverConfig, coeffs: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Advance coefficient array(s) ``(..., K^d)`` by one exponential-Euler step.

    ``xi`` is the stochastic convolution increment (already scaled).
    """
    with np.errstate(over="ignore", invalid="ignore"):
        new = config.decay * coeffs + config.phi * nonlinear_term(config, coeffs) + xi
    return new


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution path with the standardized noise that produced it."""

    config: SolverConfig
    states: np.ndarray = field(repr=False)  # (M+1, K^d)
    noise: np.ndarray = field(repr=False)  # (M, K^d) standard normals
    path_id: int = 0

    @property
    def times(self) -> np.ndarray:
        return self.config.times

    @property
    def increments(self) -> np.ndarray:
        """Scaled stochastic-convolution increments actually added."""
        return self.noise * self.config.sampler.std

    def field_at(self, n: int) -> SpectralField:
        return SpectralField(self.states[n], self.config.basis)

    def grid_values(self) -> np.ndarray:
        return self.config.basis.to_grid(self.states)

    def at(self, t: float, x) -> float:
        c = self.states[self.config.time_index(t)]
        return float(c @ self.config.basis.basis_values(x))

    def point_series(self, x) -> np.ndarray:
        return self.states @ self.config.basis.basis_values(x)


def integrate(config: SolverConfig, Z: np.ndarray, keep: Sequence[int] | None = None,
              path_ids: Sequence[int] | None = None, on_blowup: str = "raise"):
    """Run the scheme for a batch of noise blocks ``Z`` of shape ``(P, M, K^d)``.

    Returns ``(states, failed)``: states at the step indices in ``keep``
    (default: all, ``(P, M+1, K^d)``) and a boolean mask of paths that
    produced non-finite values.  With ``on_blowup="raise"`` the first such
    path raises BlowUpError instead.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 2:
        Z = Z[None]
    P, M, n = Z.shape
    if M != config.M or n != config.basis.size:
        raise ValueError(f"noise block shape {Z.shape[1:]} does not match config")
    keep = list(range(M + 1)) if keep is None else sorted(set(keep))
    slot = {k: i for i, k in enumerate(keep)}
    out = np.empty((P, len(keep), n))
    c = np.broadcast_to(config.u0.coeffs, (P, n)).copy()
    failed = np.zeros(P, dtype=bool)
    std = config.sampler.std
    if 0 in slot:
        out[:, slot[0]] = c
    for i in range(M):
        c = step(config, c, std * Z[:, i])
        bad = ~np.all(np.isfinite(c), axis=1)
        if bad.any():
            if on_blowup == "raise":
                p = int(np.flatnonzero(bad)[0])
                mode = int(np.flatnonzero(~np.isfinite(c[p]))[0])
                raise BlowUpError(i, mode, None if path_ids is None else path_ids[p])
            failed |= bad
            c[bad] = 0.0
        if i + 1 in slot:
            out[:, slot[i + 1]] = c
    out[failed] = np.nan
    return out, failed


def solve_path(config: SolverConfig, path_id: int = 0, noise: np.ndarray | None = None) -> Trajectory:
    """Single trajectory; ``noise`` overrides the seeded stream (replay)."""
    if noise is None:
        noise = draw_noise(config.seed, path_id, config.M, config.basis.size)
    noise = np.array(noise, dtype=float)
    states, _ = integrate(config, noise[None], path_ids=[path_id])
    return Trajectory(config, states[0], noise, path_id)


def solve_paths(config: SolverConfig, path_ids: Sequence[int]) -> list[Trajectory]:
    Z = np.stack([draw_noise(config.seed, p, config.M, config.basis.size) for p in path_ids])
    states, _ = integrate(config, Z, path_ids=list(path_ids))
    return [Trajectory(config, states[i], Z[i], p) for i, p in enumerate(path_ids)]


def affine_law(config: SolverConfig, t: float, x) -> tuple[float, float] | None:
    """Exact mean and variance of the scheme's ``u(t,x)`` when the drift is affine.

    The update is then diagonal per mode, ``c <- r c + b + xi``, so the law is
    Gaussian and its moments follow from a scalar recursion.  Returns None for
    non-affine drifts.
    """
    if config.drift.degree > 1:
        return None
    N = config.time_index(t)
    slope = float(np.asarray(config.evaluator(np.zeros(1), 1))[0]) - config.eta
    phi = config.phi if config.dealias_mask is None else config.phi * config.dealias_mask
    r = config.decay - phi * slope
    mean_c = solve_path(config, 0, np.zeros((config.M, config.basis.size))).states[N]
    var = np.zeros(config.basis.size)
    for _ in range(N):
        var = r * r * var + config.sampler.variance
    e = config.basis.basis_values(x)
    return float(mean_c @ e), float(np.sum(var * e * e))


def g_closed_form(x, t: float, noise: NoiseModel) -> float:
    """``g(x,t) = 1/2 sum_k q_k |k|^-2 (1 - exp(-2t|k|^2)) e_k(x)^2`` (truncated)."""
    if t < 0:
        raise DomainError("g needs t >= 0")
    a = noise.basis.eigenvalues
    e = noise.basis.basis_values(x)
    return float(0.5 * np.sum(noise.q / a * (-np.expm1(-2.0 * t * a)) * e * e))


def g_lower_bound_check(x, gamma: float, noise: NoiseModel, t_grid) -> float:
    """``inf_t g(x,t) / t^gamma`` over the grid; positive certifies the bound at this K."""
    if not 0 < gamma < 2:
        raise DomainError(f"gamma must lie in (0, 2), got {gamma}")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0) or np.any(t_grid > 1):
        raise DomainError("t-grid must lie in (0, 1]")
    a = noise.basis.eigenvalues
    e = noise.basis.basis_values(x)
    w = 0.5 * noise.q / a * e * e
    g = (-np.expm1(-2.0 * np.outer(t_grid, a))) @ w
    return float(np.min(g / t_grid**gamma))


def cube_lower_constant(x, T: float, q_ones: float, squared: bool = False) -> float:
    """Lower constant ``c_x`` for ``g(x,t) >= c_x t`` on the cube.

    ``q_ones`` is the covariance eigenvalue of the mode ``(1,...,1)``.  The
    default follows the reference closed form
    ``q (1+2Td)^-1 (2/pi)^(d/2) prod sin(x_i)``; ``squared=True`` uses the
    term ``|e_(1..1)(x)|^2`` that the series actually contains.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    if squared:
        shape = (2.0 / np.pi) ** d * np.prod(np.sin(x) ** 2)
    else:
        shape = (2.0 / np.pi) ** (d / 2) * np.prod(np.sin(x))
    return float(q_ones / (1.0 + 2.0 * T * d) * shape)


@dataclass(frozen=True)
class CovarianceCheck:
    empirical: float
    exact: float
    stderr: float

    @property
    def passed(self) -> bool:
        return abs(self.empirical - self.exact) <= 4.0 * self.stderr


def covariance_selftest(h: np.ndarray, g: np.ndarray, s: float, t: float, noise: NoiseModel,
                        n_samples: int = 100_000, seed: int = 0) -> CovarianceCheck:
    """Monte Carlo check of ``E[W_h(s) W_g(t)] = min(s,t) <Qh, g>``.

    ``W_h(t) = sum_k b_k h_k w_k(t)`` with independent Brownian motions
    ``w_k`` sampled at the two times.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    lo, hi = min(s, t), max(s, t)
    rng = path_generator(seed, 0)
    w_lo = np.sqrt(lo) * rng.standard_normal((n_samples, noise.basis.size))
    w_hi = w_lo + np.sqrt(hi - lo) * rng.standard_normal((n_samples, noise.basis.size))
    w_s, w_t = (w_lo, w_hi) if s <= t else (w_hi, w_lo)
    Wh = w_s @ (noise.b * h)
    Wg = w_t @ (noise.b * g)
    prod = Wh * Wg
    exact = lo * float(np.sum(noise.q * h * g))
    return CovarianceCheck(float(prod.mean()), exact, float(prod.std(ddof=1) / np.sqrt(n_samples)))
