"""
The free field: f = 0
=====================

With no drift the scheme is a sum of independent Ornstein-Uhlenbeck modes,
so every statistic has a closed form to compare against.
"""

# %%
import numpy as np

from stochheat import NoiseModel, SineBasis, SolverConfig, g_closed_form, run_ensemble
from stochheat.drift import CATALOG
from stochheat.solver import affine_law

basis = SineBasis(1, 32)
noise = NoiseModel.identity(basis)
config = SolverConfig(basis, noise, CATALOG["zero"](), T=0.5, M=128, seed=1)

# %%
# g(x, t) grows like sqrt(t) for small t and saturates at pi/8 in the middle
x = (np.pi / 2,)
for t in (1e-4, 1e-2, 0.5, 50.0):
    print(f"t={t:<8g} g={g_closed_form(x, t, noise):.6f}   g/sqrt(t)={g_closed_form(x, t, noise) / np.sqrt(t):.4f}")
print("pi/8 =", np.pi / 8)

# %%
# The exponential step uses the exact stochastic convolution, so the sampled
# variance at u(t, x) is g(x, t) itself, with no time-step error.
mean, var = affine_law(config, 0.5, x)
print("scheme law:", mean, var, " g:", g_closed_form(x, 0.5, noise))

ens = run_ensemble(config, 20_000, [(0.5, x)], with_malliavin=False)
s = ens.samples(0)
print(f"sample mean {s.mean():+.4f}  (se {np.sqrt(var / s.size):.4f})")
print(f"sample var  {s.var(ddof=1):.4f}")
