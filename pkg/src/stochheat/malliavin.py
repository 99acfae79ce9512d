"""Malliavin derivatives of ``u(t, x)`` for the discrete scheme.

The discrete solution is a smooth function of the standardized increments
``Z[n, k]`` (one per step and mode), and each ``Z[n, k]`` is an independent
unit Gaussian in the Cameron-Martin space.  Hence

    ||D u(t,x)||_H^2 = sum_{n,k} (d u(t,x) / d Z[n,k])^2,

exactly, for the discrete map.  The derivative is propagated by the
tangent-linear version of the exponential-Euler step,

    L_n dc = exp(-a dt) dc - phi * P[ F_n * (A dc) ],   F_n = f'(u_n) - eta,

where ``A`` maps coefficients to collocation values and ``P = A^-1``.  The
adjoint sweep applies ``L_n^T`` backwards from the truncated delta at ``x``
and gives the same number as the forward sweep up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.linalg

from .solver import SolverConfig, Trajectory, solve_path
from .spectral import DomainError, SineBasis, kernel_tail_bound, min_kernel_time


@dataclass(frozen=True, eq=False)
class CoefficientPath:
    """Frozen-per-step potential ``F_n = f'(u_n) - eta`` on the collocation grid."""

    basis: SineBasis
    values: np.ndarray = field(repr=False)  # (M, K^d)
    dt: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.basis.size:
            raise ValueError("coefficient path must have shape (M, K^d)")
        if not np.all(np.isfinite(v)):
            raise ValueError("coefficient path must be finite")

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0.0))


def coefficient_path(traj: Trajectory) -> CoefficientPath:
    cfg = traj.config
    u = cfg.basis.to_grid(traj.states[:-1])
    return CoefficientPath(cfg.basis, cfg.evaluator(u, 1) - cfg.eta, cfg.dt)


def _potential(config: SolverConfig, states: np.ndarray) -> np.ndarray:
    """``F_n`` for states ``(..., M+1, n)`` -> ``(..., M, n)``."""
    u = config.basis.to_grid(states[..., :-1, :])
    return config.evaluator(u, 1) - config.eta


def _masked_phi(config: SolverConfig) -> np.ndarray:
    if config.dealias_mask is None:
        return config.phi
    return config.phi * config.dealias_mask


def tangent_step(config: SolverConfig, F: np.ndarray, dc: np.ndarray) -> np.ndarray:
    """Apply ``L_n`` to tangent vectors ``dc`` (last axis = modes)."""
    b = config.basis
    return config.decay * dc - _masked_phi(config) * b.from_grid(F * b.to_grid(dc))


def adjoint_step(config: SolverConfig, F: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Apply ``L_n^T``; ``A`` is symmetric and ``P = w A`` on this grid."""
    b = config.basis
    return config.decay * p - b.to_grid(F * b.from_grid(_masked_phi(config) * p))


def _check_probe(config: SolverConfig, t: float, x) -> tuple[int, np.ndarray]:
    N = config.time_index(t)
    e = config.basis.basis_values(x)
    return N, e


def malliavin_norms(config: SolverConfig, states: np.ndarray, t_index: int, x) -> np.ndarray:
    """Batched adjoint sweep: ``||Du(t,x)||^2`` for states ``(P, M+1, n)``."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    e = config.basis.basis_values(x)
    std = config.sampler.std
    p = np.broadcast_to(e, (states.shape[0], e.size)).copy()
    total = np.zeros(states.shape[0])
    for n in range(t_index - 1, -1, -1):
        # p = d u(t,x) / d c_{n+1}; c_{n+1} depends on Z[n] through std
        total += np.sum((std * p) ** 2, axis=-1)
        if n > 0:
            F = config.evaluator(config.basis.to_grid(states[:, n]), 1) - config.eta
            p = adjoint_step(config, F, p)
    return total


@dataclass(frozen=True, eq=False)
class AdjointState:
    """Backward sweep ``p[n] = d u(t,x) / d c_n`` for ``n = 1..N``; ``p[N] = e(x)``."""

    x: tuple[float, ...]
    t: float
    p: np.ndarray = field(repr=False)  # (N+1, K^d); row 0 unused

    @property
    def terminal(self) -> np.ndarray:
        return self.p[-1]


def adjoint_state(traj: Trajectory, t: float, x) -> AdjointState:
    cfg = traj.config
    N, e = _check_probe(cfg, t, x)
    F = _potential(cfg, traj.states[: N + 1])
    p = np.zeros((N + 1, cfg.basis.size))
    p[N] = e
    for m in range(N - 1, 0, -1):
        p[m] = adjoint_step(cfg, F[m], p[m + 1])
    return AdjointState(tuple(np.atleast_1d(np.asarray(x, dtype=float))), float(t), p)


def malliavin_norm_adjoint(traj: Trajectory, t: float, x) -> float:
    """``||Du(t,x)||_H^2`` along a stored trajectory via one adjoint sweep."""
    N, _ = _check_probe(traj.config, t, x)
    return float(malliavin_norms(traj.config, traj.states, N, x)[0])


def forward_jacobian(traj: Trajectory, t_index: int) -> np.ndarray:
    """``d c_N / d Z[tau, k]`` for all ``tau < N``, shape ``(N, K^d, K^d)``.

    Entry ``[tau, k, :]`` holds the coefficient vector of the derivative.
    """
    cfg = traj.config
    F = _potential(cfg, traj.states)
    n = cfg.basis.size
    out = np.empty((t_index, n, n))
    std = cfg.sampler.std
    for tau in range(t_index):
        dc = np.diag(std)
        for m in range(tau + 1, t_index):
            dc = tangent_step(cfg, F[m], dc)
        out[tau] = dc
    return out


def malliavin_derivative_forward(traj: Trajectory, tau_index: int, k_index: int,
                                 t: float | None = None):
    """Derivative of ``u(t, .)`` w.r.t. ``Z[tau, k]`` by the forward linear solve.

    Returns a SpectralField.  ``t`` defaults to the final time.
    """
    from .spectral import SpectralField

    cfg = traj.config
    N = cfg.M if t is None else cfg.time_index(t)
    if not 0 <= tau_index < N:
        raise DomainError(f"tau index {tau_index} must lie in [0, {N})")
    if not 0 <= k_index < cfg.basis.size:
        raise DomainError(f"mode index {k_index} outside truncation")
    F = _potential(cfg, traj.states)
    dc = np.zeros(cfg.basis.size)
    dc[k_index] = cfg.sampler.std[k_index]
    for m in range(tau_index + 1, N):
        dc = tangent_step(cfg, F[m], dc)
    return SpectralField(dc, cfg.basis)


def malliavin_norm_forward(traj: Trajectory, t: float, x) -> float:
    """Same quantity as the adjoint sweep, from the full forward Jacobian."""
    N, e = _check_probe(traj.config, t, x)
    jac = forward_jacobian(traj, N)
    return float(np.sum((jac @ e) ** 2))


@dataclass(frozen=True)
class FDReport:
    h: float
    pairs: list[tuple[int, int]]
    analytic: np.ndarray = field(repr=False)
    finite_difference: np.ndarray = field(repr=False)

    @property
    def max_rel_error(self) -> float:
        """``max |fd - analytic| / max |analytic|`` over the sampled pairs."""
        scale = np.max(np.abs(self.analytic))
        if scale == 0:
            return float(np.max(np.abs(self.finite_difference)))
        return float(np.max(np.abs(self.finite_difference - self.analytic)) / scale)


def malliavin_fd_check(config: SolverConfig, t: float, x, h: float = 1e-4,
                       n_pairs: int = 16, path_id: int = 0, pair_seed: int = 12345) -> FDReport:
    """Central differences of ``u(t,x)`` in single noise increments.

    Compares against the forward variational derivative for ``n_pairs``
    random ``(step, mode)`` pairs with ``step < t``.
    """
    N, e = _check_probe(config, t, x)
    traj = solve_path(config, path_id)
    rng = np.random.default_rng(pair_seed)
    steps = rng.integers(0, N, size=n_pairs)
    modes = rng.integers(0, config.basis.size, size=n_pairs)
    pairs = [(int(s), int(k)) for s, k in zip(steps, modes)]
    analytic, fd = [], []
    for s, k in pairs:
        analytic.append(malliavin_derivative_forward(traj, s, k, t).coeffs @ e)
        vals = []
        for sign in (1.0, -1.0):
            Z = traj.noise.copy()
            Z[s, k] += sign * h
            vals.append(solve_path(config, path_id, Z).states[N] @ e)
        fd.append((vals[0] - vals[1]) / (2 * h))
    return FDReport(h, pairs, np.array(analytic), np.array(fd))


def _grid_heat_extremes(basis: SineBasis, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-axis min, max and row-sum norm of the grid heat kernel at times ``r``."""
    b1 = SineBasis(1, basis.K, basis.length)
    A = b1.synthesis_matrix
    G = np.einsum("ik,rk,jk->rij", A, np.exp(-np.outer(r, b1.eigenvalues)), A)
    return G.min(axis=(1, 2)), G.max(axis=(1, 2)), b1.quadrature_weight * np.abs(G).sum(2).max(1)


def heat_grid_negativity(basis: SineBasis, r) -> np.ndarray:
    """Largest negative excursion of the truncated heat kernel on the grid.

    The tensor kernel is a product of 1-d kernels, so its most negative
    entry is ``min_1 * max_1^(d-1)`` whenever ``min_1 < 0``.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    lo, hi, _ = _grid_heat_extremes(basis, r)
    return np.maximum(-lo * hi ** (basis.d - 1), 0.0)


def kernel_check_tolerance(basis: SineBasis, elapsed: float, potential_sup: float,
                           n_quad: int = 400) -> float:
    """``eps_K`` used by the evolution-kernel checks.

    Three parts: the spectral tail of the heat kernel at ``elapsed``; the
    Gibbs negativity ``nu_K(elapsed)`` of the truncated grid kernel; and the
    Duhamel term ``|F|_inf * kappa_K * int_0^elapsed nu_K(r) dr``, which is
    the first-order amount by which the truncated kernel's negative lobes
    can push ``U(t,s)`` above ``S(t-s)``.  ``kappa_K`` bounds the
    ``inf -> inf`` norm of the truncated semigroup.  All parts vanish as
    ``K`` grows.
    """
    if elapsed <= 0:
        raise DomainError("kernel tolerance needs elapsed time > 0")
    r = np.concatenate([[0.0], np.geomspace(1e-8, elapsed, n_quad)])
    lo, hi, rows = _grid_heat_extremes(basis, r)
    nu = np.maximum(-lo * hi ** (basis.d - 1), 0.0)
    kappa = float(rows.max()) ** basis.d
    duhamel = potential_sup * kappa * float(scipy.integrate.trapezoid(nu, r))
    return kernel_tail_bound(elapsed, basis) + float(nu[-1]) + duhamel


@dataclass(frozen=True, eq=False)
class EvolutionKernelMatrix:
    """Discrete evolution operator ``U(t,s)`` in spectral coordinates."""

    basis: SineBasis
    matrix: np.ndarray = field(repr=False)
    elapsed: float = 0.0
    potential_sup: float = 0.0

    def grid_kernel(self) -> np.ndarray:
        """``k(t,s; x_i, x_j)`` so that ``[U phi](x_i) = w sum_j k_ij phi(x_j)``."""
        A = self.basis.synthesis_matrix
        return A @ self.matrix @ A

    def heat_grid_kernel(self) -> np.ndarray:
        """Truncated ``G_{t-s}(x_i, x_j)`` on the same grid."""
        A = self.basis.synthesis_matrix
        return (A * np.exp(-self.elapsed * self.basis.eigenvalues)) @ A

    def apply(self, grid_values: np.ndarray) -> np.ndarray:
        """``U(t,s)`` acting on collocation values."""
        b = self.basis
        return b.to_grid(self.matrix @ b.from_grid(grid_values))

    def check(self, eps: float | None = None, t_min_constant: float = 8.0) -> "KernelReport":
        """Pointwise positivity, comparison and boundedness on the grid.

        Skipped (reported as such) when ``t - s`` is below ``t_min(K)``.
        """
        k = self.grid_kernel()
        skipped = self.elapsed < min_kernel_time(self.basis, t_min_constant)
        if eps is None:
            eps = np.inf if skipped else kernel_check_tolerance(
                self.basis, self.elapsed, self.potential_sup)
        G = self.heat_grid_kernel()
        return KernelReport(float(k.min()), float((k - G).max()), float(np.abs(k).max()),
                            float(eps), bool(skipped))


@dataclass(frozen=True)
class KernelReport:
    min_kernel: float
    max_excess: float  # max over grid of k - G
    sup_abs: float
    eps: float
    skipped: bool = False

    @property
    def positivity_ok(self) -> bool:
        return self.min_kernel >= -self.eps

    @property
    def comparison_ok(self) -> bool:
        return self.max_excess <= self.eps

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.sup_abs))

    @property
    def passed(self) -> bool:
        return self.skipped or (self.positivity_ok and self.comparison_ok and self.bounded)


def evolution_kernel(coeffs: CoefficientPath, s_index: int, t_index: int,
                     scheme: str = "frozen", config: SolverConfig | None = None) -> EvolutionKernelMatrix:
    """Matrix of ``U(t_t, t_s)`` for a piecewise-constant potential.

    ``scheme="frozen"`` solves ``y' = (Laplacian - F_n) y`` exactly on each
    step (matrix exponential of the collocation generator).
    ``scheme="tangent"`` multiplies the tangent-linear steps of the solver,
    which needs ``config`` for the step coefficients.
    """
    if not coeffs.is_nonnegative():
        raise DomainError("potential has negative values; normalize to eta = 0 first")
    if not 0 <= s_index <= t_index <= coeffs.M:
        raise DomainError("need 0 <= s <= t <= M")
    b = coeffs.basis
    n = b.size
    U = np.eye(n)
    if scheme == "frozen":
        A = b.synthesis_matrix
        w = b.quadrature_weight
        lap = np.diag(b.eigenvalues)
        for m in range(s_index, t_index):
            gen = lap + w * (A * coeffs.values[m]) @ A
            U = scipy.linalg.expm(-coeffs.dt * gen) @ U
    elif scheme == "tangent":
        if config is None:
            raise ValueError("tangent scheme needs the solver config")
        for m in range(s_index, t_index):
            U = tangent_step(config, coeffs.values[m] + 0.0, U.T).T
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    sup = float(np.abs(coeffs.values[s_index:t_index]).max()) if t_index > s_index else 0.0
    return EvolutionKernelMatrix(b, U, (t_index - s_index) * coeffs.dt, sup)


def second_malliavin_norm(traj: Trajectory, t: float, x) -> float:
    """``||D^2 u(t,x)||^2`` as the Frobenius norm of the noise Hessian.

    The Hessian is ``sum_m V_m^T diag(w_m) V_m`` where ``V_m`` holds the grid
    values of all first-order tangents at step ``m`` and
    ``w_m = -f''(u_m) * P^T(phi * p_{m+1})`` with ``p`` the adjoint state.
    """
    cfg = traj.config
    if cfg.evaluator is cfg.drift and cfg.drift.m < 2:
        raise DomainError("second derivative needs a drift with m >= 2")
    N, e = _check_probe(cfg, t, x)
    b = cfg.basis
    n = b.size
    states = traj.states
    u = b.to_grid(states[:N])
    F = cfg.evaluator(u, 1) - cfg.eta
    f2 = cfg.evaluator(u, 2)
    std = cfg.sampler.std
    phi = _masked_phi(cfg)

    adj = adjoint_state(traj, t, x).p

    # tangents T[m] = d c_m / d Z, columns indexed by (tau, k) with tau < m
    n_noise = N * n
    T = np.zeros((n_noise, n))
    H = np.zeros((n_noise, n_noise))
    for m in range(N):
        if m > 0:
            T = tangent_step(cfg, F[m - 1], T)
            T[(m - 1) * n: m * n] += np.diag(std)
            V = b.to_grid(T)  # (n_noise, grid)
            w = -f2[m] * b.from_grid(phi * adj[m + 1])
            H += (V * w) @ V.T
    return float(np.sum(H * H))
