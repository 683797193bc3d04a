"""Simulation of mean-field particle systems with simultaneous jumps and
of their conditional McKean-Vlasov limits driven by common noise.

The public API is re-exported here; see the submodules for details.
"""

__version__ = "0.1.0"

from .measure import EmpiricalMeasure1D, integrate, quantile, wasserstein
from .model import (
    BUILTIN_MODELS,
    Continuous,
    Discrete,
    ModelError,
    ModelSpec,
    NumericalAbort,
    build_model,
    check_centering,
    kappa_sq,
    kappa_sq_mc,
    psi_tilde,
    sigma_xi_pair,
)
from .noise import NoiseStream, WhiteNoisePanel, draw_marks, parse_seed, poisson_events, sample_panel
from .finite_system import FiniteSimConfig, TrajectoryBundle, empirical_path, simulate_finite
from .limit_system import LimitSimConfig, simulate_limit
from .picard import PicardReport, picard_init, picard_solve, picard_step
from .generator import BUILTIN_TESTS, TestFunction2D, generator_apply, martingale_residual
from .diagnostics import convergence_study, covariation_study, estimate_covariation, moment_audit
from .multipop import MultiPopSpec, build_multipop, simulate_multipop_finite, simulate_multipop_limit

__all__ = [
    "__version__",
    "EmpiricalMeasure1D", "integrate", "quantile", "wasserstein",
    "BUILTIN_MODELS", "Continuous", "Discrete", "ModelError", "ModelSpec", "NumericalAbort",
    "build_model", "check_centering", "kappa_sq", "kappa_sq_mc", "psi_tilde", "sigma_xi_pair",
    "NoiseStream", "WhiteNoisePanel", "draw_marks", "parse_seed", "poisson_events", "sample_panel",
    "FiniteSimConfig", "TrajectoryBundle", "empirical_path", "simulate_finite",
    "LimitSimConfig", "simulate_limit",
    "PicardReport", "picard_init", "picard_solve", "picard_step",
    "BUILTIN_TESTS", "TestFunction2D", "generator_apply", "martingale_residual",
    "convergence_study", "covariation_study", "estimate_covariation", "moment_audit",
    "MultiPopSpec", "build_multipop", "simulate_multipop_finite", "simulate_multipop_limit",
]
