"""End-edge offloading of multi-condition preprocessing subtasks and conditioning-scale pruning."""
from ._accel import USE_NUMBA
from .harness import ExperimentPlan, gen_scenario, ingest_profile, run_experiment
from .latency import LatencyBreakdown, evaluate, uplink_rate
from .manager import SolveReport, solve_baseline, solve_heuristic, solve_oracle
from .scales import FeatureTensor, InferenceCostModel, ScaleReport, estimate_scales, predict_latency, preprocess_feature
from .workload import (
    Assignment,
    ChannelSpec,
    EdgeSpec,
    Scenario,
    SubtaskSpec,
    UserSpec,
    load_scenario,
    validate_assignment,
)

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "Assignment",
    "ChannelSpec",
    "EdgeSpec",
    "ExperimentPlan",
    "FeatureTensor",
    "InferenceCostModel",
    "LatencyBreakdown",
    "ScaleReport",
    "Scenario",
    "SolveReport",
    "SubtaskSpec",
    "UserSpec",
    "estimate_scales",
    "evaluate",
    "gen_scenario",
    "ingest_profile",
    "load_scenario",
    "predict_latency",
    "preprocess_feature",
    "run_experiment",
    "solve_baseline",
    "solve_heuristic",
    "solve_oracle",
    "uplink_rate",
    "validate_assignment",
]
