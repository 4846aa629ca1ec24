"""Shared test helpers: mini plans, the external model command, summary lines."""

from __future__ import annotations

import sys
from pathlib import Path

from infersentry.protocol import ExperimentPlan, plan_from_dict

EXT_MODEL = Path(__file__).parent / "ext_model.py"
DATA_DIR = Path(__file__).parent / "data"

# filled by test_acceptance, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def ext_model_command(*extra: str) -> list[str]:
    return [sys.executable, str(EXT_MODEL), *extra]


def make_plan(**overrides) -> ExperimentPlan:
    """A small fast plan; override any top-level plan key."""
    raw = {
        "test_set": {"seed": 42, "count": 16, "f_in": 8},
        "backend": {"kind": "fixture", "seed": 42, "f_in": 8, "hidden": 4, "classes": 3},
        "thresholds": {"t_star": 0.05, "ster_max": 0.0, "budget_ns": 100000000},
        "trials_per_condition": 1,
        "activations_per_trial": 32,
        "baseline_passes": 2,
        "settle_ms": 0,
        "conditions": [{"condition_id": "zero-load", "stressors": []}],
    }
    raw.update(overrides)
    return plan_from_dict(raw)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
