"""Elective surgery scheduling under uncertain durations.

Assigns surgeries to operating-room/day slots by mixed-integer
programming while keeping the probability of overtime in each slot
below a chosen level. Three interchangeable linearizations of the
chance constraint are provided: a trained feed-forward network
embedded as MILP rows (fnn), a piecewise-linear square-root
approximation (plf), and sampled scenarios with a violation budget
(sbm). Schedules can then be stress-tested by Monte-Carlo simulation.
"""

from .distributions import (
    Fit,
    LogNormalParams,
    Moments,
    NormalParams,
    aic_better_fit,
    fenton_wilkinson_sum,
    fit_type_params,
    inv_norm_cdf,
    lognormal_from_moments,
    lognormal_percentile,
    moments_from_lognormal,
)
from .evaluate import (
    CaseVerdict,
    OvertimeCase,
    SimulationReport,
    cross_feasible,
    evaluate_overtime_case,
    generate_cases,
    simulate,
)
from .fnn import (
    FeedForwardNet,
    TrainConfig,
    TrainingDiverged,
    embed,
    forward,
    generate_training_set,
    grid_search,
    load_net,
    save_net,
    train,
)
from .instance import (
    PROFILES,
    Instance,
    InstanceFormatError,
    ORDaySlot,
    Surgery,
    SurgeryType,
    load_instance,
    synthesize_instance,
    write_instance,
)
from .milp import InfeasibleError, LinearModel, Solution, SolverError, solve
from .plf import (
    Breakpoints,
    PlfConfig,
    add_plf_constraints,
    approx_sqrt,
    build_breakpoints,
    plf_config_for_instance,
)
from .sbm import (
    BigMTable,
    ScenarioSet,
    add_sbm_constraints,
    compute_big_m,
    elbow_scan,
    kmedoids_reduce,
    sample_scenarios,
)
from .scheduler import (
    BaseModel,
    Schedule,
    build_base,
    extract_schedule,
    objective_of,
    utilization,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "Fit",
    "LogNormalParams",
    "Moments",
    "NormalParams",
    "aic_better_fit",
    "fenton_wilkinson_sum",
    "fit_type_params",
    "inv_norm_cdf",
    "lognormal_from_moments",
    "lognormal_percentile",
    "moments_from_lognormal",
    "CaseVerdict",
    "OvertimeCase",
    "SimulationReport",
    "cross_feasible",
    "evaluate_overtime_case",
    "generate_cases",
    "simulate",
    "FeedForwardNet",
    "TrainConfig",
    "TrainingDiverged",
    "embed",
    "forward",
    "generate_training_set",
    "grid_search",
    "load_net",
    "save_net",
    "train",
    "PROFILES",
    "Instance",
    "InstanceFormatError",
    "ORDaySlot",
    "Surgery",
    "SurgeryType",
    "load_instance",
    "synthesize_instance",
    "write_instance",
    "InfeasibleError",
    "LinearModel",
    "Solution",
    "SolverError",
    "solve",
    "Breakpoints",
    "PlfConfig",
    "add_plf_constraints",
    "approx_sqrt",
    "build_breakpoints",
    "plf_config_for_instance",
    "BigMTable",
    "ScenarioSet",
    "add_sbm_constraints",
    "compute_big_m",
    "elbow_scan",
    "kmedoids_reduce",
    "sample_scenarios",
    "BaseModel",
    "Schedule",
    "build_base",
    "extract_schedule",
    "objective_of",
    "utilization",
    "validate",
    "__version__",
]
