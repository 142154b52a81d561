"""Scenario files, Monte Carlo runner, reports and the off-path audit."""
from .audit import Violation, audit_trace
from .report import IoError, export_report, import_report
from .runner import STRATEGIES, TrialReport, TrialRow, run_scenario, run_trial, sweep
from .scenario import InvalidScenario, Scenario, load_scenario
from .world import World, build_world

__all__ = [
    "IoError", "InvalidScenario", "STRATEGIES", "Scenario", "TrialReport", "TrialRow",
    "Violation", "World", "audit_trace", "build_world", "export_report", "import_report",
    "load_scenario", "run_scenario", "run_trial", "sweep",
]
