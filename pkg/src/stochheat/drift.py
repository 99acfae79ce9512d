"""Monotone drifts, their Yosida approximations and mollified versions.

For an increasing ``f`` and ``lam > 0`` the resolvent ``J = (I + lam f)^-1``
is found by a safeguarded Newton iteration, and

    f_lam(y) = (y - J(y)) / lam = f(J(y)).

Higher derivatives of ``f_lam`` follow from Faa di Bruno's formula applied
to ``f_lam = f o J`` together with ``J^(k) = -lam f_lam^(k)`` for ``k >= 2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from .spectral import DomainError


class ResolventError(RuntimeError):
    """Newton/bisection failed to reach the requested residual."""

    def __init__(self, msg, residual):
        super().__init__(f"{msg} (max residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class DriftFunction:
    """Scalar nonlinearity with derivatives ``f, f', ..., f^(m)``.

    ``degree`` is the polynomial growth exponent ``p``.  All callables must
    accept numpy arrays.
    """

    name: str
    derivatives: tuple[Callable[[np.ndarray], np.ndarray], ...]
    degree: float
    monotone: bool = True
    vanishes: bool = False

    def __post_init__(self):
        if len(self.derivatives) < 1:
            raise ValueError("need at least f itself")

    @property
    def m(self) -> int:
        return len(self.derivatives) - 1

    def __call__(self, y, n: int = 0):
        if n > self.m:
            raise DomainError(f"{self.name}: derivative order {n} > smoothness {self.m}")
        return self.derivatives[n](np.asarray(y, dtype=float))

    @classmethod
    def polynomial(cls, coeffs: Sequence[float], name: str | None = None, m: int | None = None):
        """Drift from ascending power coefficients, e.g. ``[0, 1, 0, 1]`` for x + x^3."""
        poly = Polynomial(np.asarray(coeffs, dtype=float))
        deg = poly.degree()
        m = max(deg + 1, 3) if m is None else m
        derivs = tuple(poly.deriv(j) if j else poly for j in range(m + 1))
        zero = not np.any(poly.coef)
        return cls(name or f"poly{list(coeffs)}", derivs, float(max(deg, 0)), vanishes=zero)

    def check_monotone(self, grid) -> bool:
        """``f' >= 0`` on every grid point."""
        return bool(np.all(self(grid, 1) >= 0.0))


def cubic() -> DriftFunction:
    return DriftFunction.polynomial([0, 0, 0, 1], name="x^3", m=5)


def cubic_plus_linear() -> DriftFunction:
    return DriftFunction.polynomial([0, 1, 0, 1], name="x+x^3", m=5)


def linear(a: float = 1.0) -> DriftFunction:
    if a < 0:
        raise ValueError("linear drift needs a >= 0 to be monotone")
    return DriftFunction.polynomial([0, a], name=f"{a}x", m=5)


def with_lipschitz_part(
    f: DriftFunction,
    g: Sequence[Callable[[np.ndarray], np.ndarray]],
    lipschitz: float,
    name: str | None = None,
) -> tuple[DriftFunction, float]:
    """Fold a Lipschitz perturbation ``g`` into a monotone drift.

    ``f + g`` is only quasi-monotone; ``f + g + eta*id`` with
    ``eta = lipschitz`` is increasing.  Returns that monotone function and
    ``eta``, so that ``f(u) + g(u) = tilde_f(u) - eta*u``.
    """
    m = min(f.m, len(g) - 1)
    eta = float(lipschitz)

    def term(j):
        fj, gj = f.derivatives[j], g[j]
        if j == 0:
            return lambda y: fj(y) + gj(y) + eta * y
        if j == 1:
            return lambda y: fj(y) + gj(y) + eta
        return lambda y: fj(y) + gj(y)

    derivs = tuple(term(j) for j in range(m + 1))
    return DriftFunction(name or f"{f.name}+g", derivs, f.degree), eta


def cubic_sine() -> tuple[DriftFunction, float]:
    """``x^3 + sin x`` normalized to monotone form, ``eta = 1``."""
    g = (np.sin, np.cos, lambda y: -np.sin(y), lambda y: -np.cos(y),
         np.sin, np.cos)
    return with_lipschitz_part(cubic(), g, 1.0, name="x^3+sin(x)")


CATALOG: dict[str, Callable[[], DriftFunction]] = {
    "cubic": cubic,
    "cubic_plus_linear": cubic_plus_linear,
    "linear": linear,
    "zero": lambda: DriftFunction.polynomial([0.0], name="0"),
}


@dataclass(frozen=True)
class NewtonSettings:
    tol: float = 1e-14
    max_iter: int = 200

    def __post_init__(self):
        if not (self.tol > 0 and self.max_iter >= 1):
            raise ValueError("Newton settings need tol > 0 and max_iter >= 1")


def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


def _bump_derivative_polys(n: int) -> list[Polynomial]:
    """``P_j`` with ``psi^(j) = P_j / (1-x^2)^(2j) * psi``, ``psi = exp(-1/(1-x^2))``."""
    one_m = Polynomial([1.0, 0.0, -1.0])
    xpoly = Polynomial([0.0, 1.0])
    polys = [Polynomial([1.0])]
    for j in range(n):
        p = polys[-1]
        polys.append(p.deriv() * one_m**2 + 4 * j * xpoly * p * one_m - 2 * xpoly * p)
    return polys


# exact mass of the unnormalized bump, for reporting the quadrature error
_BUMP_MASS = quad(lambda s: float(np.exp(-1.0 / (1.0 - s * s))), -1.0, 1.0,
                  epsabs=1e-15, limit=200)[0]


@dataclass(frozen=True)
class Mollifier:
    """``zeta_beta(x) = zeta(x/beta)/beta`` with Gauss-Legendre quadrature.

    The normalizing constant is fixed so that the discrete mass is exactly
    one; ``quadrature_error`` reports the gap to the exact integral.
    """

    beta: float
    nodes: int = 32
    max_derivative: int = 4

    def __post_init__(self):
        if not (0 < self.beta <= 1):
            raise DomainError(f"mollifier width must lie in (0, 1], got {self.beta}")

    @cached_property
    def _table(self):
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        psi = _bump(x)
        const = 1.0 / np.sum(w * psi)
        polys = _bump_derivative_polys(self.max_derivative)
        derivs = [const * psi * p(x) / (1.0 - x * x) ** (2 * j) for j, p in enumerate(polys)]
        return x, w, const, np.array(derivs)

    @property
    def quadrature_error(self) -> float:
        const = self._table[2]
        return abs(const * _BUMP_MASS - 1.0)

    def __call__(self, z, j: int = 0):
        """``zeta_beta^(j)(z)``."""
        z = np.asarray(z, dtype=float) / self.beta
        const = self._table[2]
        p = _bump_derivative_polys(j)[j]
        out = np.zeros_like(z)
        inside = np.abs(z) < 1.0
        zi = z[inside]
        out[inside] = const * np.exp(-1.0 / (1.0 - zi**2)) * p(zi) / (1.0 - zi**2) ** (2 * j)
        return out / self.beta ** (1 + j)

    def convolve(self, func, y, j: int = 0):
        """``(func * zeta_beta^(j))(y)`` by quadrature over ``[y-beta, y+beta]``."""
        if j > self.max_derivative:
            raise DomainError(f"mollifier derivative {j} exceeds table size")
        x, w, _, derivs = self._table
        y = np.asarray(y, dtype=float)
        vals = func(y[..., None] - self.beta * x)
        return np.sum(vals * (w * derivs[j]), axis=-1) / self.beta**j


@dataclass(frozen=True)
class RegularizedDrift:
    """Yosida approximation ``f_lam`` of ``base``, optionally mollified."""

    base: DriftFunction
    lam: float
    beta: float | None = None
    newton: NewtonSettings = field(default_factory=NewtonSettings)

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"Yosida parameter must be > 0, got {self.lam}")
        if self.beta is not None and not (0 < self.beta <= 1):
            raise DomainError(f"mollifier width must lie in (0, 1], got {self.beta}")

    @property
    def m(self) -> int:
        return self.base.m

    @cached_property
    def mollifier(self) -> Mollifier | None:
        return None if self.beta is None else Mollifier(self.beta)

    def __call__(self, y, n: int = 0):
        if self.beta is not None:
            return mollified(self, n, y)
        return yosida_dn(self, n, y)


def _residual(f, lam, x, y):
    return x + lam * f(x) - y


def resolvent(rd: RegularizedDrift, y):
    """Root ``x`` of ``x + lam f(x) = y``, elementwise.

    Newton from ``y / (1 + lam f'(y))``, falling back to bisection whenever
    the Newton step leaves the current bracket.
    """
    f, lam = rd.base, rd.lam
    tol, max_iter = rd.newton.tol, rd.newton.max_iter
    y = np.asarray(y, dtype=float)
    scalar = y.ndim == 0
    y = np.atleast_1d(y)
    thresh = tol * np.maximum(1.0, np.abs(y))

    # bracket: h is strictly increasing, h(y) = lam f(y)
    h_y = lam * f(y, 0)
    span = np.maximum(1.0, np.abs(y))
    lo = np.where(h_y > 0, y - span, y)
    hi = np.where(h_y > 0, y, y + span)
    for _ in range(200):
        bad_lo = _residual(f, lam, lo, y) > 0
        bad_hi = _residual(f, lam, hi, y) < 0
        if not (bad_lo.any() or bad_hi.any()):
            break
        span = np.where(bad_lo | bad_hi, 2 * span, span)
        lo = np.where(bad_lo, y - span, lo)
        hi = np.where(bad_hi, y + span, hi)
    else:
        raise ResolventError("could not bracket the resolvent", np.inf)

    x = y / (1.0 + lam * f(y, 1))
    x = np.clip(x, lo, hi)
    for _ in range(max_iter):
        h = _residual(f, lam, x, y)
        done = np.abs(h) <= thresh
        if done.all():
            break
        lo = np.where(h < 0, x, lo)
        hi = np.where(h > 0, x, hi)
        dh = 1.0 + lam * f(x, 1)
        step = x - h / dh
        mid = 0.5 * (lo + hi)
        ok = (step > lo) & (step < hi) & np.isfinite(step)
        x_new = np.where(ok, step, mid)
        # bracket collapsed to adjacent floats: accept the better endpoint
        stuck = (hi - lo) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x))
        x = np.where(done, x, np.where(stuck, x, x_new))
        if np.all(done | stuck):
            break
    h = np.abs(_residual(f, lam, x, y))
    if np.any(h > thresh):
        raise ResolventError("resolvent did not converge", float(np.max(h / thresh * tol)))
    return x[0] if scalar else x


def yosida(rd: RegularizedDrift, y):
    """``f_lam(y) = (y - J(y)) / lam``."""
    y = np.asarray(y, dtype=float)
    return (y - resolvent(rd, y)) / rd.lam


def yosida_d1(rd: RegularizedDrift, y):
    """``f_lam'(y) = f'(J) / (1 + lam f'(J))``, valued in ``[0, 1/lam]``."""
    if rd.base.m < 1:
        raise DomainError("first derivative needs m >= 1")
    fp = rd.base(resolvent(rd, y), 1)
    return fp / (1.0 + rd.lam * fp)


def _bell_table(n: int, xs: dict[int, np.ndarray]) -> dict[tuple[int, int], np.ndarray]:
    """Partial Bell polynomials ``B_{a,b}(x_1, x_2, ...)`` for ``a <= n``."""
    one = np.ones_like(xs[1])
    zero = np.zeros_like(xs[1])
    B = {(0, 0): one}
    for a in range(1, n + 1):
        B[(a, 0)] = zero
    for b in range(1, n + 1):
        B[(0, b)] = zero
    for a in range(1, n + 1):
        for b in range(1, a + 1):
            acc = zero
            for i in range(1, a - b + 2):
                if (a - i, b - 1) in B and i in xs:
                    acc = acc + comb(a - 1, i - 1) * xs[i] * B[(a - i, b - 1)]
            B[(a, b)] = acc
    return B


def yosida_dn(rd: RegularizedDrift, n: int, y):
    """``f_lam^(n)(y)`` for ``0 <= n <= m``.

    Uses ``(1 + lam f'(J)) f_lam^(n) = sum_{k=2}^{n} f^(k)(J) B_{n,k}(J', ..., J^(n-k+1))``
    where the right-hand side only involves ``J^(j)`` with ``j < n``.
    """
    if n < 0 or n > rd.base.m:
        raise DomainError(f"derivative order {n} outside [0, {rd.base.m}]")
    if n == 0:
        return yosida(rd, y)
    f, lam = rd.base, rd.lam
    J = resolvent(rd, y)
    fp = f(J, 1)
    denom = 1.0 + lam * fp
    if n == 1:
        return fp / denom
    fl = {1: fp / denom}
    Jd = {1: 1.0 / denom}
    fk = {k: f(J, k) for k in range(2, n + 1)}
    for order in range(2, n + 1):
        B = _bell_table(order, Jd)
        rhs = sum(fk[k] * B[(order, k)] for k in range(2, order + 1))
        fl[order] = rhs / denom
        Jd[order] = -lam * fl[order]
    return fl[n]


def mollified(rd: RegularizedDrift, n: int, y):
    """``(f_lam * zeta_beta)^(n)(y)``.

    Derivatives are moved onto ``f_lam`` as far as its smoothness allows,
    ``f_lam^(j) * zeta_beta^(n-j)`` with ``j = min(n, m)``.  The fixed
    32-node rule integrates the smooth bump far more accurately than its
    oscillating derivatives.
    """
    if rd.beta is None:
        raise DomainError("mollified drift needs beta")
    if n < 0:
        raise DomainError("derivative order must be >= 0")
    j = min(n, rd.base.m)
    return rd.mollifier.convolve(lambda z: yosida_dn(rd, j, z), y, n - j)


def growth_envelope(fn, n: int, grid, q: float) -> float:
    """``sup_grid |fn^(n)(x)| / (1 + |x|^q)``."""
    grid = np.asarray(grid, dtype=float)
    vals = np.abs(fn(grid, n))
    return float(np.max(vals / (1.0 + np.abs(grid) ** q)))


def fit_growth_exponent(fn, n: int, grid) -> float:
    """Least-squares slope of ``log|fn^(n)|`` against ``log|x|`` on the outer grid."""
    grid = np.asarray(grid, dtype=float)
    xmax = np.max(np.abs(grid))
    outer = grid[np.abs(grid) >= xmax / 4]
    vals = np.abs(fn(outer, n))
    keep = vals > 0
    if keep.sum() < 2:
        return 0.0
    slope = np.polyfit(np.log(np.abs(outer[keep])), np.log(vals[keep]), 1)[0]
    return float(max(slope, 0.0))
