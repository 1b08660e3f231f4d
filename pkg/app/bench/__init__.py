"""
Bench
=====

Scenario files, the dataplane harness, metrics and the `bench` CLI.
"""

from .config import ScenarioConfig, ScenarioKind, load_config, parse_config
from .dataplane import Dataplane, make_sink, make_source
from .exceptions import BenchError, ConfigError, RuntimeFault
from .metrics import LatencySummary, MetricsCollector, MetricsReport
from .scenarios import SCENARIOS, list_scenarios, run_scenario

__all__ = [
    # Config
    "ScenarioConfig",
    "ScenarioKind",
    "load_config",
    "parse_config",
    # Harness
    "Dataplane",
    "make_source",
    "make_sink",
    # Metrics
    "LatencySummary",
    "MetricsCollector",
    "MetricsReport",
    # Scenarios
    "SCENARIOS",
    "list_scenarios",
    "run_scenario",
    # Exceptions
    "BenchError",
    "ConfigError",
    "RuntimeFault",
]
