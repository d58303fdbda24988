"""Locally D-optimal designs for 2x2 factorial experiments with binary response.

The package computes optimal allocations for the main-effects model under
the logit, probit, log-log and complementary log-log links, measures how
much efficiency a design loses when the assumed parameters are wrong, and
reruns the Monte Carlo robustness study from the command line.
"""
from .design import (
    UNIFORM,
    det_criterion,
    information_matrix,
    objective_L,
    relative_loss,
    variance_from_weight,
)
from .exceptions import (
    DegenerateWeightError,
    InconsistentInput,
    NoConvergence,
    NumericalError,
    OptDesignError,
    PatternMismatch,
    ValidationError,
)
from .glmfit import BinomialTable, FitResult, analyze, fit_glm, read_table_csv
from .links import Link, mean, weight, weight_curve, weights_from_beta
from .robustness import (
    RangeSpec,
    RmaxReport,
    Q_ratio,
    closed_Q,
    q_products,
    r_max,
    r_max_uniform,
    r_max_unbounded,
    standardized_distance,
    theta_star,
    uniform_loss,
)
from .simulation import StudyConfig, StudyResult, export_study, run_study, sample_weights, saturated_fraction
from .solver import (
    Branch,
    SolveResult,
    SolverConfig,
    allocate,
    grid_oracle,
    is_saturated,
    solve,
    solve_corollary1,
    solve_corollary2,
    solve_general,
    solve_many,
    solve_saturated,
)

__version__ = "0.1.0"
