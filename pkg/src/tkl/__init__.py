"""Tamed kinetic Langevin samplers for targets with superlinearly growing gradients.

Modules: :mod:`~tkl.potential` (targets), :mod:`~tkl.taming` (tamed drift),
:mod:`~tkl.schemes` (exponential and OBABO chains), :mod:`~tkl.metrics`
(weighted norms, W2 estimators), :mod:`~tkl.propcheck` (verification suites)
and :mod:`~tkl.cli`.
"""

from .metrics import (
    SampleCloud,
    WeightedNormParams,
    gaussian_w2,
    jacobian_opnorm_fd,
    moment_bound_check,
    order_fit,
    w2_1d,
    w2_exact_smalln,
    weighted_norm_sq,
)
from .noise import NoiseStream
from .potential import PotentialSpec, builtin_potential, check_assumptions
from .schemes import (
    PhaseState,
    RunRecord,
    SchemeParams,
    auto_gamma,
    exp_step,
    make_params,
    noise_covariance,
    obabo_step,
    psi_coefficients,
    run_chain,
    run_coupled,
    sample_noise_pair,
    scheme_params,
    verlet_map,
)
from .taming import RegimeError, TamedDrift, effective_lipschitz, tamed_eval, taming_cap, taming_radius

__version__ = "0.1.0"

__all__ = [
    "NoiseStream",
    "PhaseState",
    "PotentialSpec",
    "RegimeError",
    "RunRecord",
    "SampleCloud",
    "SchemeParams",
    "TamedDrift",
    "WeightedNormParams",
    "auto_gamma",
    "builtin_potential",
    "check_assumptions",
    "effective_lipschitz",
    "exp_step",
    "gaussian_w2",
    "jacobian_opnorm_fd",
    "make_params",
    "moment_bound_check",
    "noise_covariance",
    "obabo_step",
    "order_fit",
    "psi_coefficients",
    "run_chain",
    "run_coupled",
    "sample_noise_pair",
    "scheme_params",
    "tamed_eval",
    "taming_cap",
    "taming_radius",
    "verlet_map",
    "w2_1d",
    "w2_exact_smalln",
    "weighted_norm_sq",
]
