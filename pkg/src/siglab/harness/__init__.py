"""Scenario configuration, experiment orchestration, reporting, and the CLI."""

from .config import ScenarioConfig, load_scenario
from .experiment import (
    METRICS_HEADER,
    MetricRow,
    aggregate,
    compare,
    read_metrics,
    run_experiment,
    write_metrics,
)

__all__ = [
    "ScenarioConfig",
    "load_scenario",
    "MetricRow",
    "METRICS_HEADER",
    "run_experiment",
    "aggregate",
    "compare",
    "read_metrics",
    "write_metrics",
]
