"""MPC with a terminal cost learned by approximate value iteration."""

from vimpc.approximator import MonomialBasis, ValueApproximator, evaluate, features, fit_weights
from vimpc.closed_loop import (
    Artifacts,
    ClosedLoopTrace,
    Controller,
    SimConfig,
    check_value_decrease,
    compare_runs,
    performance_sum,
    run_closed_loop,
)
from vimpc.horizon_cert import (
    HorizonCertificate,
    compute_horizons,
    estimate_epsilon,
    estimate_gamma,
    suboptimality_alpha,
)
from vimpc.models import (
    Box,
    LqrBaseline,
    SystemModel,
    linear_model,
    linearize,
    lqr_baseline,
    orbital_rendezvous,
    solve_riccati,
    stage_cost,
    step,
)
from vimpc.ocp_solver import OcpProblem, OcpSolution, QuadraticTerminal, shift_warm_start, solve_ocp
from vimpc.value_iteration import (
    InnerMinConfig,
    ViConfig,
    ViResult,
    bellman_target,
    check_decrease,
    estimate_region_radius,
    extract_policy,
    vi_run,
)

__version__ = "0.1.0"

__all__ = [
    "Artifacts",
    "bellman_target",
    "Box",
    "check_decrease",
    "check_value_decrease",
    "ClosedLoopTrace",
    "compare_runs",
    "compute_horizons",
    "Controller",
    "estimate_epsilon",
    "estimate_gamma",
    "estimate_region_radius",
    "evaluate",
    "extract_policy",
    "features",
    "fit_weights",
    "HorizonCertificate",
    "InnerMinConfig",
    "linear_model",
    "linearize",
    "lqr_baseline",
    "LqrBaseline",
    "MonomialBasis",
    "OcpProblem",
    "OcpSolution",
    "orbital_rendezvous",
    "performance_sum",
    "QuadraticTerminal",
    "run_closed_loop",
    "shift_warm_start",
    "SimConfig",
    "solve_ocp",
    "solve_riccati",
    "stage_cost",
    "step",
    "suboptimality_alpha",
    "SystemModel",
    "ValueApproximator",
    "vi_run",
    "ViConfig",
    "ViResult",
]
