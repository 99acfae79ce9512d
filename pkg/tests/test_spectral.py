import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from stochheat.spectral import (DomainError, SineBasis, SpectralField, analyze, apply_semigroup,
                                eval_basis, heat_kernel, kernel_mass, kernel_tail_bound,
                                laplacian_eigenvalue, mass_tail_bound, min_kernel_time, synthesize)

HALF = np.pi / 2


def test_eval_basis_examples():
    assert eval_basis((1,), (HALF,)) == pytest.approx(np.sqrt(2 / np.pi), abs=1e-15)
    assert eval_basis((2,), (HALF,)) == pytest.approx(0.0, abs=1e-15)
    assert eval_basis((1, 1), (HALF, HALF)) == pytest.approx(2 / np.pi, abs=1e-15)


@pytest.mark.parametrize("x", [(0.0,), (np.pi,), (-0.1,), (4.0,), (np.nan,)])
def test_eval_basis_rejects_boundary(x):
    with pytest.raises(DomainError):
        eval_basis((1,), x)


def test_eval_basis_rejects_bad_mode():
    with pytest.raises(DomainError):
        eval_basis((0,), (1.0,))


@pytest.mark.parametrize("k, lam", [((1,), 1), ((1, 1), 2), ((3, 4), 25)])
def test_laplacian_eigenvalue(k, lam):
    assert laplacian_eigenvalue(k) == lam


def test_orthonormality_by_adaptive_quadrature():
    K = 6
    for k in range(1, K + 1):
        for j in range(1, K + 1):
            val, _ = quad(lambda x: eval_basis((k,), (x,)) * eval_basis((j,), (x,)), 1e-12,
                          np.pi - 1e-12, limit=200)
            assert val == pytest.approx(float(k == j), abs=1e-8)


def test_orthonormality_2d_on_fine_grid():
    # midpoint rule on a fine grid is exact for trig polynomials of low degree
    b = SineBasis(2, 4)
    n = 64
    pts = (np.arange(n) + 0.5) * np.pi / n
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    vals = np.stack([b.basis_values((x, y)) for x, y in zip(X.ravel(), Y.ravel())])
    gram = vals.T @ vals * (np.pi / n) ** 2
    assert np.max(np.abs(gram - np.eye(b.size))) < 1e-8


def test_semigroup_identity_and_single_mode():
    b = SineBasis(1, 8)
    f = SpectralField.mode(b, (1,))
    assert apply_semigroup(0.0, f) is f
    assert apply_semigroup(0.7, f).coeffs[0] == pytest.approx(np.exp(-0.7), rel=1e-15)
    with pytest.raises(DomainError):
        apply_semigroup(-1e-3, f)


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0, 2), t=st.floats(0, 2), seed=st.integers(0, 1000))
def test_semigroup_composition(s, t, seed):
    b = SineBasis(2, 5)
    f = SpectralField(np.random.default_rng(seed).standard_normal(b.size), b)
    a = apply_semigroup(s, apply_semigroup(t, f)).coeffs
    c = apply_semigroup(s + t, f).coeffs
    assert np.allclose(a, c, rtol=1e-13, atol=1e-300)


def test_heat_kernel_large_time_mode_one_dominates():
    b = SineBasis(1, 64)
    assert heat_kernel(5.0, (HALF,), (HALF,), b) == pytest.approx(2 / np.pi * np.exp(-5), abs=1e-6)
    with pytest.raises(DomainError):
        heat_kernel(0.0, (HALF,), (HALF,), b)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.01, 3.13), y=st.floats(0.01, 3.13), t=st.floats(1e-3, 3))
def test_heat_kernel_exactly_symmetric(x, y, t):
    b = SineBasis(1, 32)
    assert heat_kernel(t, (x,), (y,), b) == heat_kernel(t, (y,), (x,), b)


def test_kernel_mass_examples():
    b = SineBasis(1, 64)
    v = kernel_mass(0.1, (HALF,), b)
    assert 0 < v <= 1 + 1e-3
    ts = np.linspace(0.05, 3, 60)
    vals = [kernel_mass(t, (HALF,), b) for t in ts]
    assert np.all(np.diff(vals) <= 1e-15)
    assert kernel_mass(40.0, (HALF,), b) < 1e-15
    with pytest.raises(DomainError):
        kernel_mass(0.0, (HALF,), b)


def test_kernel_mass_matches_erf_series_oracle():
    # method of images: free heat flow of the odd 2*pi-periodic extension of 1
    from scipy.special import erf
    t, x = 0.05, 1.0
    s = 2 * np.sqrt(t)
    direct = 0.5 * sum(
        erf((x - 2 * m * np.pi) / s) - erf((x - (2 * m + 1) * np.pi) / s)
        - erf((x - (2 * m - 1) * np.pi) / s) + erf((x - 2 * m * np.pi) / s)
        for m in range(-10, 11))
    b = SineBasis(1, 400)
    assert kernel_mass(t, (x,), b) == pytest.approx(direct, abs=1e-10)


def test_mass_bound_and_tail_shrink_on_k_ladder():
    t = 0.02
    prev = np.inf
    for K in (8, 16, 32, 64):
        b = SineBasis(1, K)
        eps = mass_tail_bound(t, b)
        assert eps < prev
        prev = eps
        for x in b.grid_1d:
            assert kernel_mass(t, (x,), b) <= 1 + eps
    tails = [kernel_tail_bound(0.05, SineBasis(2, K)) for K in (4, 8, 16)]
    assert tails[0] > tails[1] > tails[2]


def test_tail_bound_dominates_actual_truncation_error():
    t = 0.03
    ref = SineBasis(1, 400)
    for K in (8, 16):
        b = SineBasis(1, K)
        eps = kernel_tail_bound(t, b)
        for x, y in [(0.4, 0.4), (1.0, 2.0), (HALF, HALF)]:
            err = abs(heat_kernel(t, (x,), (y,), ref) - heat_kernel(t, (x,), (y,), b))
            assert err <= eps


def test_min_kernel_time():
    assert min_kernel_time(SineBasis(1, 8)) == pytest.approx(8 / 64)


def test_transform_round_trip():
    b = SineBasis(2, 8)
    f = SpectralField(np.random.default_rng(0).standard_normal(b.size), b)
    g = analyze(f.grid_values(), b)
    assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-12
    e1 = SpectralField.mode(b, (1, 1))
    assert np.max(np.abs(analyze(e1.grid_values(), b).coeffs - e1.coeffs)) < 1e-12
    assert np.all(SpectralField.zeros(b).grid_values() == 0)
    assert np.allclose(analyze(f.grid_values().reshape(b.shape), b).coeffs, f.coeffs)


def test_grid_values_match_pointwise_synthesis():
    b = SineBasis(2, 5)
    f = SpectralField(np.random.default_rng(1).standard_normal(b.size), b)
    vals = f.grid_values()
    for i in (0, 7, 24):
        assert vals[i] == pytest.approx(synthesize(f, b.grid[i]), abs=1e-12)


def test_analyze_rejects_size_mismatch():
    with pytest.raises(DomainError):
        analyze(np.zeros(7), SineBasis(1, 8))
    with pytest.raises(DomainError):
        analyze(np.zeros((4, 16)), SineBasis(2, 8))


def test_inverse_is_weighted_transpose():
    b = SineBasis(2, 4)
    A = b.synthesis_matrix
    assert np.allclose(A, A.T, atol=1e-14)
    assert np.allclose(b.quadrature_weight * A @ A, np.eye(b.size), atol=1e-13)


def test_indicator_coefficients_match_quadrature():
    b = SineBasis(1, 9)
    for k in range(1, 10):
        val, _ = quad(lambda x: eval_basis((k,), (x,)), 1e-14, np.pi - 1e-14)
        assert b.indicator_coeffs()[k - 1] == pytest.approx(val, abs=1e-10)


def test_discrete_semigroup_is_sup_contraction_on_smooth_fields():
    b = SineBasis(1, 32)
    f = b.project(lambda x: np.sin(x) + 0.3 * np.sin(3 * x) ** 2)
    base = np.max(np.abs(f.grid_values()))
    for t in (0.01, 0.1, 1.0):
        assert np.max(np.abs(apply_semigroup(t, f).grid_values())) <= base * (1 + 1e-3)


def test_field_is_immutable_copy():
    b = SineBasis(1, 4)
    c = np.ones(4)
    f = SpectralField(c, b)
    c[0] = 5
    assert f.coeffs[0] == 1
    with pytest.raises(ValueError):
        f.coeffs[0] = 2
    with pytest.raises(DomainError):
        SpectralField(np.ones(3), b)
    with pytest.raises(DomainError):
        SpectralField(np.array([1, np.inf, 0, 0]), b)


def test_rescaled_interval():
    b = SineBasis(1, 16, length=1.0)
    assert b.eigenvalues[0] == pytest.approx(np.pi**2)
    assert b.basis_values((0.5,))[0] == pytest.approx(np.sqrt(2.0))
    f = SpectralField(np.random.default_rng(2).standard_normal(16), b)
    assert np.allclose(analyze(f.grid_values(), b).coeffs, f.coeffs, atol=1e-12)
