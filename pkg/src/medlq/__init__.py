"""Online LQ control with divergence-weighted exploration.

Library layout:

* control_core  — Riccati / Lyapunov solvers, policy evaluation
* divergence    — confusing-instance line search, mask, weights
* estimation    — ridge identification and confidence radius
* envs          — simulators and bundled benchmark systems
* agents        — learning algorithms and baselines
* bench         — multi-seed harness, CSV reports
* plots         — figures rendered from the CSV reports
"""

from .control_core import (
    CostSpec,
    GainPolicy,
    PolicyEvaluation,
    SystemParams,
    closed_loop,
    optimal_gain,
    policy_cost,
    solve_dare,
    solve_lyapunov_bellman,
    stationary_covariance,
)
from .divergence import (
    ConfusingInstanceResult,
    InterpolationProblem,
    candidate_mask,
    cost_gap,
    find_root_exact,
    find_root_taylor,
    interpolate,
    llr_rate,
    med_coefficient,
    taylor_coefficients,
)
from .envs import Environment, load_bundled, load_environment, pendulum_linearized, step
from .estimation import DesignState, RlsEstimate, doubling_due, ingest, rls_estimate
from .agents import MedLqConfig, build_agent
from .bench import ExperimentSpec, aggregate, interquartile_mean, run_experiment

__version__ = "0.1.0"
