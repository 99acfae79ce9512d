"""Tensor sine basis of the Dirichlet Laplacian on the cube (0, pi)^d.

Fields are stored as flat coefficient vectors over the full tensor
truncation ``{1..K}^d`` (C order, last axis fastest).  Point values on the
collocation grid ``x_j = j*pi/(K+1)`` are related to coefficients by a
type-I discrete sine transform, which is exactly invertible.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft


class DomainError(ValueError):
    """Argument outside the domain where an operation is defined."""


def _as_point(x, d: int) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[-1] != d:
        raise DomainError(f"point has dimension {x.shape[-1]}, expected {d}")
    return x


def _check_interior(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)) or np.any(x <= 0.0) or np.any(x >= np.pi):
        raise DomainError(f"point {x} is not inside the open cube (0, pi)^d")


def eval_basis(k, x) -> float:
    """Evaluate ``e_k(x) = (2/pi)^(d/2) prod_i sin(k_i x_i)``.

    >>> round(eval_basis((1,), (np.pi / 2,)), 4)
    0.7979
    """
    k = np.atleast_1d(np.asarray(k, dtype=int))
    if np.any(k < 1):
        raise DomainError(f"mode index {k} has a component < 1")
    x = _as_point(x, k.size)
    _check_interior(x)
    d = k.size
    return float((2.0 / np.pi) ** (d / 2) * np.prod(np.sin(k * x)))


def laplacian_eigenvalue(k) -> float:
    """Return ``|k|^2``, the eigenvalue of ``-Laplacian`` on ``e_k``."""
    k = np.atleast_1d(np.asarray(k, dtype=int))
    if np.any(k < 1):
        raise DomainError(f"mode index {k} has a component < 1")
    return float(np.sum(k * k))


@dataclass(frozen=True)
class SineBasis:
    """Per-axis truncation ``K`` of the sine basis in ``d`` dimensions."""

    d: int
    K: int
    length: float = np.pi

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.K,) * self.d

    @property
    def size(self) -> int:
        return self.K**self.d

    @cached_property
    def modes(self) -> np.ndarray:
        """Integer array ``(K^d, d)`` of multi-indices in storage order."""
        grid = itertools.product(range(1, self.K + 1), repeat=self.d)
        return np.array(list(grid), dtype=int).reshape(self.size, self.d)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """``|k|^2`` per stored mode, rescaled when ``length != pi``."""
        scale = (np.pi / self.length) ** 2
        return scale * np.sum(self.modes**2, axis=1).astype(float)

    @cached_property
    def grid_1d(self) -> np.ndarray:
        return np.arange(1, self.K + 1) * self.length / (self.K + 1)

    @cached_property
    def grid(self) -> np.ndarray:
        """Collocation points, array ``(K^d, d)`` in storage order."""
        pts = itertools.product(self.grid_1d, repeat=self.d)
        return np.array(list(pts), dtype=float).reshape(self.size, self.d)

    @property
    def quadrature_weight(self) -> float:
        """Trapezoid cell volume; ``analyze`` equals weight * ``synthesize``ᵀ."""
        return (self.length / (self.K + 1)) ** self.d

    @property
    def _norm(self) -> float:
        return (2.0 / self.length) ** (self.d / 2)

    def basis_values(self, x) -> np.ndarray:
        """All ``e_k(x)`` at one interior point, shape ``(K^d,)``."""
        x = _as_point(x, self.d)
        if x.ndim != 1:
            raise DomainError("basis_values takes a single point")
        _check_interior(x * np.pi / self.length)
        k = np.arange(1, self.K + 1)
        factors = [np.sin(k * x[i] * np.pi / self.length) for i in range(self.d)]
        out = factors[0]
        for f in factors[1:]:
            out = np.multiply.outer(out, f)
        return self._norm * np.asarray(out).reshape(self.size)

    # transform pair on the collocation grid

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients ``(..., K^d)`` to collocation values ``(..., K^d)``."""
        c = np.asarray(coeffs, dtype=float)
        if c.shape[-1] != self.size:
            raise DomainError(f"expected {self.size} coefficients, got {c.shape[-1]}")
        lead = c.shape[:-1]
        c = c.reshape(lead + self.shape)
        axes = tuple(range(-self.d, 0))
        v = scipy.fft.dstn(c, type=1, axes=axes) * (self._norm / 2**self.d)
        return v.reshape(lead + (self.size,))

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        """Collocation values ``(..., K^d)`` to coefficients ``(..., K^d)``."""
        v = np.asarray(values, dtype=float)
        if v.shape[-1] != self.size:
            raise DomainError(f"expected {self.size} grid values, got {v.shape[-1]}")
        lead = v.shape[:-1]
        v = v.reshape(lead + self.shape)
        axes = tuple(range(-self.d, 0))
        c = scipy.fft.idstn(v, type=1, axes=axes) * (2**self.d / self._norm)
        return c.reshape(lead + (self.size,))

    @cached_property
    def synthesis_matrix(self) -> np.ndarray:
        """Dense ``A`` with ``A[j, k] = e_k(x_j)``; symmetric for this grid."""
        return self.to_grid(np.eye(self.size))

    def indicator_coeffs(self) -> np.ndarray:
        """Exact sine coefficients of the indicator of the whole cube."""
        k = np.arange(1, self.K + 1)
        one_d = np.sqrt(2.0 / self.length) * self.length / np.pi * (1 - (-1.0) ** k) / k
        out = one_d
        for _ in range(self.d - 1):
            out = np.multiply.outer(out, one_d)
        return np.asarray(out).reshape(self.size)

    def project(self, func) -> "SpectralField":
        """Sample a callable on the collocation grid and transform.

        ``func`` receives the grid as ``d`` arrays (one per coordinate).
        """
        vals = np.broadcast_to(func(*self.grid.T), (self.size,))
        return SpectralField(self.from_grid(vals), self)


@dataclass(frozen=True, eq=False)
class SpectralField:
    coeffs: np.ndarray
    basis: SineBasis = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.basis.size,):
            raise DomainError(f"coefficient vector must have length {self.basis.size}")
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, basis: SineBasis) -> "SpectralField":
        return cls(np.zeros(basis.size), basis)

    @classmethod
    def mode(cls, basis: SineBasis, k, value: float = 1.0) -> "SpectralField":
        k = tuple(np.atleast_1d(k))
        idx = np.ravel_multi_index(tuple(i - 1 for i in k), basis.shape)
        c = np.zeros(basis.size)
        c[idx] = value
        return cls(c, basis)

    def grid_values(self) -> np.ndarray:
        return self.basis.to_grid(self.coeffs)

    def __call__(self, x) -> float:
        return synthesize(self, x)


def apply_semigroup(t: float, field: SpectralField) -> SpectralField:
    """Heat semigroup ``S(t)``, diagonal ``exp(-t|k|^2)`` on coefficients."""
    if t < 0:
        raise DomainError(f"semigroup time must be >= 0, got {t}")
    if t == 0:
        return field
    decay = np.exp(-t * field.basis.eigenvalues)
    return SpectralField(decay * field.coeffs, field.basis)


def heat_kernel(t: float, x, y, basis: SineBasis) -> float:
    """Truncated Dirichlet heat kernel ``sum_k exp(-t|k|^2) e_k(x) e_k(y)``."""
    if t <= 0:
        raise DomainError(f"heat kernel needs t > 0, got {t}")
    ex = basis.basis_values(x)
    ey = basis.basis_values(y)
    return float(np.sum(np.exp(-t * basis.eigenvalues) * (ex * ey)))


def kernel_mass(t: float, x, basis: SineBasis) -> float:
    """``[S(t) 1_O](x)`` from the exact sine coefficients of the indicator."""
    if t <= 0:
        raise DomainError(f"kernel mass needs t > 0, got {t}")
    c = np.exp(-t * basis.eigenvalues) * basis.indicator_coeffs()
    return float(c @ basis.basis_values(x))


def _theta(t: float, n: int | None) -> float:
    """``sum_{k=1}^{n} exp(-t k^2)``; ``n=None`` sums until negligible."""
    if n is None:
        n = int(np.ceil(np.sqrt(40.0 / t))) + 1
    k = np.arange(1, n + 1)
    return float(np.sum(np.exp(-t * k * k)))


def kernel_tail_bound(t: float, basis: SineBasis) -> float:
    """Bound on ``|G_t(x,y) - G_t^K(x,y)|`` uniformly in ``x, y``.

    Every discarded term is at most ``(2/pi)^d exp(-t|k|^2)``, and the sum
    over the complement of the ``K``-box factorizes.  This is the ``eps_K``
    used for pointwise kernel checks.
    """
    if t <= 0:
        raise DomainError("tail bound needs t > 0")
    t = t * (np.pi / basis.length) ** 2
    full = _theta(t, None)
    trunc = _theta(t, basis.K)
    c = (2.0 / basis.length) ** basis.d
    return c * max(full**basis.d - trunc**basis.d, 0.0)


def mass_tail_bound(t: float, basis: SineBasis) -> float:
    """Bound on ``|[S(t)1_O](x) - [S(t)1_O]^K(x)|`` uniformly in ``x``."""
    if t <= 0:
        raise DomainError("tail bound needs t > 0")
    t = t * (np.pi / basis.length) ** 2

    def partial(n):
        if n is None:
            n = int(np.ceil(np.sqrt(40.0 / t))) + 1
        k = np.arange(1, n + 1)
        return float(np.sum(4.0 / (np.pi * k) * np.exp(-t * k * k)))

    return max(partial(None) ** basis.d - partial(basis.K) ** basis.d, 0.0)


def min_kernel_time(basis: SineBasis, c: float = 8.0) -> float:
    """``t_min(K) = c / K^2``; pointwise kernel checks are skipped below it."""
    return c / basis.K**2


def synthesize(field: SpectralField, x) -> float:
    """Point value of a truncated field at an interior point."""
    return float(field.coeffs @ field.basis.basis_values(x))


def analyze(samples: np.ndarray, basis: SineBasis) -> SpectralField:
    """Coefficients from samples on the collocation grid.

    ``samples`` may be flat ``(K^d,)`` or shaped ``(K,)*d``.
    """
    s = np.asarray(samples, dtype=float)
    if s.size != basis.size or (s.ndim > 1 and s.shape != basis.shape):
        raise DomainError(f"grid size mismatch: got {s.shape}, expected {basis.shape}")
    return SpectralField(basis.from_grid(s.reshape(basis.size)), basis)
