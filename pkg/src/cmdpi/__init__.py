"""Tabular multi-objective MDP planning with smooth Tchebycheff scalarization
and KL-regularized mirror descent policy iteration."""
from .analysis import (
    MetricReport,
    ParetoFront2D,
    bregman_divergence,
    distance_to_front,
    expected_utility_metric,
    hypervolume,
    lipschitz_empirical,
    metric_report,
    occupancy_weighted_kl,
    pareto_front_oracle,
    sparsity,
)
from .harness import SweepResult, SweepSpec, export, random_momdp, resolve_env, run_sweep, toy_momdp
from .momdp import (
    Momdp,
    MomdpError,
    OccupancyMeasure,
    load_momdp,
    objective_vector,
    occupancy_measure,
    save_momdp,
    validate,
)
from .scalarization import (
    ConstantsReport,
    Preference,
    StchParams,
    linear_utility,
    lipschitz_constant,
    preference_grid,
    relative_smoothness_constant,
    stch_gradient,
    stch_utility,
    utopia_from_momdp,
)
from .solvers import (
    SolverConfig,
    SolveTrace,
    capql_planning,
    cmdpi,
    mirror_descent_certificate,
    soft_bellman_solve,
    solve_batch,
    value_iteration_linear,
)
from .verify import VerificationReport, verify_all

__version__ = "0.1.0"
