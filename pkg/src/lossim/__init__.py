"""Discrete-event simulator for decentralised scheduling of periodic training jobs."""

from .metrics import MetricsReport, hop_distribution, improvement_over_insitu
from .models import AvailabilityModel, JobKey, Overheads, RuntimeModel, fit_runtime_model
from .scenario import Scenario, derive_seed, load_scenario, optimization_testbed, paper_testbed
from .scheduler import DropReason, rank_candidates, schedule
from .sim import Engine, RunConfig, run, run_with_log
from .topology import ScenarioError, Topology

__all__ = [
    "AvailabilityModel",
    "DropReason",
    "Engine",
    "JobKey",
    "MetricsReport",
    "Overheads",
    "RunConfig",
    "RuntimeModel",
    "Scenario",
    "ScenarioError",
    "Topology",
    "derive_seed",
    "fit_runtime_model",
    "hop_distribution",
    "improvement_over_insitu",
    "load_scenario",
    "optimization_testbed",
    "paper_testbed",
    "rank_candidates",
    "run",
    "run_with_log",
    "schedule",
]
