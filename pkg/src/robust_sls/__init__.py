"""Robust L1 system level synthesis.

State-feedback controllers are parameterized by finite impulse response
system responses ``phi_x``, ``phi_u``. Robust performance against norm-bounded
model error ``[delta_a, delta_b]`` is certified by a linear program, and the
smallest certified level is found by bisection.
"""

from .estimator import RobustSLSController
from .lp import LinearProgram, LpStatus, lp_feasible, lp_solve
from .operators import FirResponse, LtvOperator, feedback_inverse, fir_l1_norm, lift_fir, ltv_induced_norm
from .sls import (
    Plant,
    SystemResponse,
    UncertainPlant,
    achievability_residual,
    delta_hat,
    predicted_response,
    realize_controller,
    simulate_closed_loop,
)
from .structure import StructureMask, SupportGraph, chain_system, locality_mask
from .synthesis import (
    CostOutput,
    InfeasibleAtAllGamma,
    SynthesisProblem,
    SynthesisResult,
    bisect_gamma,
    epsilon_threshold,
    feasibility_at_gamma,
    nominal_l1_min,
)
from .verify import (
    PerturbationKind,
    PerturbationSpec,
    brute_force_worst,
    exact_worst_gain,
    robust_margin,
    run_samples,
    sample_perturbation,
)

__version__ = "0.1.0"
