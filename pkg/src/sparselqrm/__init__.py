"""Sparse state-feedback design for linear systems with multiplicative noise."""

from .gradient import (
    CostEval,
    fd_gradient,
    gauss_newton_step,
    gradient_domination_check,
    lqrm_cost,
    lqrm_gradient,
    natural_gradient_step,
)
from .network import (
    NetworkSpec,
    build_benchmark,
    calibrate_noise_level,
    erdos_renyi_adjacency,
    grounded_laplacian,
    tustin_discretize,
)
from .optimizers import (
    OptimizerConfig,
    RunResult,
    SweepConfig,
    Termination,
    gamma_sweep,
    run_gradient,
    run_proximal,
    run_subgradient,
    verify_convergence_rate,
)
from .regularizers import RegKind, RegularizerSpec, huber_gradient, reg_prox, reg_subgradient, reg_value
from .solvers import (
    NoConvergenceError,
    NotStabilizingError,
    RiccatiSolution,
    SolveOptions,
    lqrm_optimal,
    optimal_gain,
    riccati_value_iteration,
    solve_cost_lyapunov,
    solve_covariance_lyapunov,
)
from .system import (
    CostSpec,
    MultiplicativeNoiseSystem,
    NoiseTerm,
    StabilityReport,
    is_mean_square_stable,
    monte_carlo_simulate,
    second_moment_matrix,
)

__version__ = "0.1.0"
