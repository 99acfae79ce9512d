"""
Density of u(t, x) for the cubic drift
======================================

Monte Carlo ensemble, kernel density estimate, small-ball probabilities of
the Malliavin norm and a negative moment.
"""

# %%
import numpy as np

from stochheat import NoiseModel, SineBasis, SolverConfig, run_ensemble
from stochheat.density import kde, negative_moment, small_ball_curve
from stochheat.drift import cubic

basis = SineBasis(1, 16)
config = SolverConfig(basis, NoiseModel.identity(basis), cubic(), T=1.0, M=64, seed=9)
ens = run_ensemble(config, 4000, [(1.0, (np.pi / 2,))])

# %%
est = kde(ens)
print(f"bandwidth {est.bandwidth:.4f}, mass on the grid {est.mass:.5f}, peak {est.peak:.3f}")
step = len(est.grid) // 16
for u, p in zip(est.grid[::step], est.density[::step]):
    print(f"{u:+.3f} {'#' * int(60 * p / est.peak)}")

# %%
sb = small_ball_curve(ens, 0, [0.3, 0.2, 0.15, 0.1, 0.05])
for e, p, lo, hi in zip(sb.eps, sb.prob, sb.lower, sb.upper):
    print(f"P(|Du|^2 < {e:<5g}) = {p:.4f}  [{lo:.4f}, {hi:.4f}]")

nm = negative_moment(ens, 0, 2.0)
print(f"E |Du|^-2 = {nm.estimate:.4f}; after trimming 0.1%: {nm.trimmed:.4f}")
