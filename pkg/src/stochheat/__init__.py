"""Spectral simulation of the stochastic heat equation with monotone drift.

Submodules: ``spectral`` (sine basis, heat semigroup), ``drift`` (Yosida and
mollified regularizations), ``solver`` (exponential-Euler paths, noise),
``malliavin`` (derivative norms, evolution kernels), ``density`` (ensembles,
KDE, small-ball statistics), ``io`` and ``cli``.
"""
from .spectral import (DomainError, SineBasis, SpectralField, apply_semigroup, eval_basis,
                       heat_kernel, kernel_mass, laplacian_eigenvalue, synthesize, analyze)
from .drift import (DriftFunction, RegularizedDrift, ResolventError, resolvent, yosida, yosida_d1,
                    yosida_dn, mollified, growth_envelope)
from .solver import (BlowUpError, NoiseModel, SolverConfig, Trajectory, solve_path, solve_paths,
                     g_closed_form, g_lower_bound_check, covariance_selftest)
from .malliavin import (malliavin_norm_adjoint, malliavin_derivative_forward, malliavin_fd_check,
                        evolution_kernel, second_malliavin_norm, coefficient_path)
from .density import run_ensemble, kde, small_ball_curve, negative_moment, remark58_check

__version__ = "0.1.0"
