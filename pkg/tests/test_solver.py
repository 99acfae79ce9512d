import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochheat import drift as dm
from stochheat.solver import (BlowUpError, NoiseModel, SolverConfig, StochasticConvolutionSampler,
                              affine_law, coarsen_noise, covariance_selftest, cube_lower_constant,
                              draw_noise, g_closed_form, g_lower_bound_check, integrate, solve_path,
                              solve_paths, step)
from stochheat.spectral import DomainError, SineBasis, SpectralField, apply_semigroup

HALF = np.pi / 2


def cfg(K=16, d=1, drift=None, noise=None, **kw):
    b = SineBasis(d, K)
    noise = noise(b) if callable(noise) else (noise or NoiseModel.identity(b))
    return SolverConfig(b, noise, drift or dm.cubic(), **kw)


def test_zero_everything_stays_zero():
    c = cfg(drift=dm.CATALOG["zero"](), noise=lambda b: NoiseModel.custom(b, np.zeros(b.size)))
    assert np.all(solve_path(c).states == 0)


def test_deterministic_linear_flow_is_exact():
    b = SineBasis(1, 8)
    c = SolverConfig(b, NoiseModel.custom(b, np.zeros(8)), dm.CATALOG["zero"](), T=1.0, M=16,
                     u0=SpectralField.mode(b, (1,)))
    tr = solve_path(c)
    assert np.allclose(tr.states[:, 0], np.exp(-tr.times), rtol=1e-14, atol=0)
    assert np.all(tr.states[:, 1:] == 0)


def test_linear_drift_single_mode_matches_scalar_recursion():
    b = SineBasis(1, 1)
    a, dt = 2.0, 1 / 32
    c = SolverConfig(b, NoiseModel.identity(b), dm.linear(a), T=1.0, M=32, seed=5)
    tr = solve_path(c)
    E = np.exp(-dt)
    phi = 1 - E
    std = np.sqrt((1 - np.exp(-2 * dt)) / 2)
    u = 0.0
    for n in range(32):
        u = E * u - phi * a * u + std * tr.noise[n, 0]
        assert tr.states[n + 1, 0] == pytest.approx(u, rel=1e-13, abs=1e-15)


def test_variance_table_limits():
    b = SineBasis(1, 32)
    noise = NoiseModel.smoothed(b, 0.3)
    dt = 1e-7
    v = StochasticConvolutionSampler(noise, dt).variance
    assert np.all(v >= 0)
    assert np.allclose(v, noise.q * dt, rtol=1e-3)


def test_determinism_and_batch_independence():
    c = cfg(seed=11, M=32)
    a = solve_path(c, 3)
    b = solve_path(c, 3)
    assert np.array_equal(a.states, b.states)
    batch = solve_paths(c, [1, 2, 3])
    assert np.array_equal(batch[2].states, a.states)
    assert not np.array_equal(batch[0].states, a.states)


def test_noise_streams_keyed_by_path_and_seed():
    z1 = draw_noise(1, 0, 4, 3)
    assert np.array_equal(z1, draw_noise(1, 0, 4, 3))
    assert not np.array_equal(z1, draw_noise(1, 1, 4, 3))
    assert not np.array_equal(z1, draw_noise(2, 0, 4, 3))


def test_replay_with_stored_noise():
    c = cfg(seed=4, M=16)
    tr = solve_path(c, 9)
    again = solve_path(c, 123, tr.noise)
    assert np.array_equal(again.states, tr.states)
    assert tr.states.shape == (17, 16) and tr.noise.shape == (16, 16)
    assert np.array_equal(tr.states[0], c.u0.coeffs)


def test_blowup_guard_identifies_step():
    c = cfg(drift=dm.DriftFunction.polynomial([0, 0, 0, -1], name="-x^3"), M=8,
            u0=SpectralField(np.full(16, 50.0), SineBasis(1, 16)))
    with pytest.raises(BlowUpError) as info:
        solve_path(c)
    assert info.value.step >= 0 and info.value.path == 0
    Z = np.stack([draw_noise(0, p, 8, 16) for p in range(2)])
    states, failed = integrate(c, Z, on_blowup="mask")
    assert failed.all() and np.isnan(states).all()


def test_config_validation():
    b = SineBasis(1, 4)
    n = NoiseModel.identity(b)
    for bad in ({"T": 0}, {"M": 0}, {"eta": -1}, {"beta": 0.1}):
        with pytest.raises(ValueError):
            SolverConfig(b, n, dm.cubic(), **bad)
    with pytest.raises(ValueError):
        SolverConfig(SineBasis(1, 5), n, dm.cubic())
    with pytest.raises(ValueError):
        NoiseModel.identity(SineBasis(2, 4))
    with pytest.raises(ValueError):
        NoiseModel.custom(b, [1, 1, -1, 1])
    with pytest.raises(DomainError):
        SolverConfig(b, n, dm.cubic(), M=4).time_index(0.3)


def test_trace_condition():
    assert NoiseModel.smoothed(SineBasis(2, 4), 0.1).trace_condition_holds()
    assert not NoiseModel.smoothed(SineBasis(3, 4), 0.4).trace_condition_holds()
    assert NoiseModel.identity(SineBasis(1, 4)).trace_condition_holds()


def test_quasi_monotone_normalization_matches_raw_drift():
    raw = dm.DriftFunction("raw", (lambda y: y**3 + np.sin(y), lambda y: 3 * y**2 + np.cos(y)),
                           3.0, monotone=False)
    mono, eta = dm.cubic_sine()
    a = solve_path(cfg(drift=raw, seed=2))
    b = solve_path(cfg(drift=mono, eta=eta, seed=2))
    assert np.max(np.abs(a.states - b.states)) < 1e-12


def test_u0_callable_projection():
    c = cfg(u0=lambda x: np.sin(x) + 0.5 * np.sin(3 * x))
    assert c.u0.coeffs[0] == pytest.approx(np.sqrt(np.pi / 2), rel=1e-12)
    assert c.u0.coeffs[2] == pytest.approx(0.5 * np.sqrt(np.pi / 2), rel=1e-12)


def test_g_closed_form_examples():
    b = SineBasis(1, 64)
    n = NoiseModel.identity(b)
    assert g_closed_form((HALF,), 0.0, n) == 0.0
    ts = np.linspace(0, 2, 50)
    vals = [g_closed_form((0.9,), t, n) for t in ts]
    assert np.all(np.diff(vals) >= 0)
    big = NoiseModel.identity(SineBasis(1, 10_000))
    assert g_closed_form((HALF,), 50.0, big) == pytest.approx(np.pi / 8, abs=1e-4)


def test_g_matches_independent_series():
    # frozen reference from a direct double loop in extended precision
    import mpmath as mp
    mp.mp.dps = 30
    x, t = 1.1, 0.37
    ref = mp.mpf(0)
    for k1 in range(1, 9):
        for k2 in range(1, 9):
            a = k1**2 + k2**2
            e2 = (2 / mp.pi) ** 2 * mp.sin(k1 * x) ** 2 * mp.sin(k2 * 2.0) ** 2
            ref += (1 + a) ** -1.0 / (2 * a) * (1 - mp.e ** (-2 * t * a)) * e2
    n = NoiseModel.smoothed(SineBasis(2, 8), 0.5)
    assert g_closed_form((x, 2.0), t, n) == pytest.approx(float(ref), rel=1e-13)


def test_lower_bound_check_examples():
    n1 = NoiseModel.identity(SineBasis(1, 256))
    ts = np.geomspace(1e-4, 1, 40)
    assert g_lower_bound_check((HALF,), 0.5, n1, ts) > 0
    for bad in (0.0, 2.0, 2.5):
        with pytest.raises(DomainError):
            g_lower_bound_check((HALF,), bad, n1, ts)
    with pytest.raises(DomainError):
        g_lower_bound_check((HALF,), 1.0, n1, [0.0, 0.5])


def test_corrected_cube_constant_is_a_lower_bound():
    for d, x in ((1, (0.3,)), (2, (HALF, HALF)), (2, (0.4, 2.5)), (3, (1.0, 1.2, 2.0))):
        noise = NoiseModel.smoothed(SineBasis(d, 6), 0.5)
        c = cube_lower_constant(x, 1.0, 2.0 ** 0 * (1 + d) ** -1.0, squared=True)
        ts = np.geomspace(1e-4, 1, 30)
        assert g_lower_bound_check(x, 1.0, noise, ts) >= c * (1 - 1e-12)


def test_reference_constant_value():
    assert cube_lower_constant((HALF,), 1.0, 1.0) == pytest.approx(np.sqrt(2 / np.pi) / 3)
    assert cube_lower_constant((HALF,), 1.0, 1.0, squared=True) == pytest.approx(2 / np.pi / 3)


def test_covariance_selftest_examples():
    b = SineBasis(1, 4)
    n = NoiseModel.identity(b)
    e1, e2 = np.eye(4)[0], np.eye(4)[1]
    r = covariance_selftest(e1, e1, 1.0, 1.0, n, 20_000, seed=1)
    assert r.exact == 1.0 and r.passed
    r = covariance_selftest(e1, e2, 0.5, 0.8, n, 20_000, seed=2)
    assert r.exact == 0.0 and r.passed
    h = np.random.default_rng(0).standard_normal(4)
    r = covariance_selftest(h, h, 0.3, 0.7, n, 100_000, seed=3)
    assert r.exact == pytest.approx(0.3 * h @ h) and r.passed
    with pytest.raises(ValueError):
        covariance_selftest(h, h, 0.3, 0.7, n, 999)


def test_coarsened_noise_reproduces_coarse_law_and_refinement_converges():
    c = cfg(K=16, M=128, seed=1)
    fine = solve_path(c)
    # coarse standardized increments are exactly N(0,1) by construction
    Zc = coarsen_noise(fine.noise, c.noise, c.dt, 2)
    big = np.stack([coarsen_noise(draw_noise(3, p, 128, 16), c.noise, c.dt, 2) for p in range(400)])
    assert abs(big.var() - 1) < 0.01
    coarse = solve_path(c.replace(M=64), 0, Zc)
    coarser = solve_path(c.replace(M=32), 0, coarsen_noise(fine.noise, c.noise, c.dt, 4))
    d1 = np.max(np.abs(coarse.states[-1] - fine.states[-1]))
    d2 = np.max(np.abs(coarser.states[-1] - fine.states[-1]))
    assert d1 < d2


def test_linear_case_coupled_refinement_is_exact():
    c = cfg(K=8, M=64, drift=dm.CATALOG["zero"](), seed=4)
    fine = solve_path(c)
    coarse = solve_path(c.replace(M=16), 0, coarsen_noise(fine.noise, c.noise, c.dt, 4))
    assert np.allclose(coarse.states[-1], fine.states[-1], atol=1e-13)


def test_affine_law_matches_closed_forms():
    c = cfg(K=16, drift=dm.CATALOG["zero"](), u0=lambda x: np.sin(x))
    mean, var = affine_law(c, 0.5, (0.8,))
    expect_mean = apply_semigroup(0.5, c.u0)((0.8,))
    assert mean == pytest.approx(expect_mean, rel=1e-12)
    assert var == pytest.approx(g_closed_form((0.8,), 0.5, c.noise), rel=1e-12)
    assert affine_law(cfg(), 0.5, (0.8,)) is None


def test_dissipative_cubic_no_blowup():
    c = cfg(K=16, M=64, seed=0)
    Z = np.stack([draw_noise(0, p, 64, 16) for p in range(1000)])
    states, failed = integrate(c, Z, on_blowup="mask")
    assert not failed.any()
    sup = np.max(np.abs(c.basis.to_grid(states)), axis=(1, 2))
    assert np.isfinite(sup).all() and np.mean(sup**4) < 1e3


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), path=st.integers(0, 10**6))
def test_step_is_pure(seed, path):
    c = cfg(K=8, M=4, seed=seed)
    z = draw_noise(seed, path, 4, 8)
    x0 = np.random.default_rng(seed).standard_normal(8)
    xi = c.sampler.std * z[0]
    assert np.array_equal(step(c, x0, xi), step(c, x0.copy(), xi.copy()))


def test_dealias_mask_toggle():
    c = cfg(K=12, dealias=True)
    assert c.dealias_mask.sum() == 8
    assert np.isfinite(solve_path(c).states).all()


def test_config_hash_stability():
    a, b = cfg(seed=1), cfg(seed=1)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != cfg(seed=2).config_hash()
