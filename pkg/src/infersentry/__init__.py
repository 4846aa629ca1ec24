"""Joint output-stability and tail-latency verification for inference backends.

The harness measures two things about a backend at once: whether its softmax
outputs stay within a deviation threshold of a zero-load reference profile,
and whether its per-activation latency tail stays inside a cycle budget. Both
must hold for a configuration to pass.
"""

from __future__ import annotations

from .metrics import (
    ConditionSummary,
    MetricsError,
    SoftmaxVector,
    Thresholds,
    Verdict,
    compute_delta,
    compute_ster,
    evaluate_joint,
    percentile_nearest_rank,
    softmax,
    summarize_condition,
)

__version__ = "0.1.0"

__all__ = [
    "ConditionSummary",
    "MetricsError",
    "SoftmaxVector",
    "Thresholds",
    "Verdict",
    "compute_delta",
    "compute_ster",
    "evaluate_joint",
    "percentile_nearest_rank",
    "softmax",
    "summarize_condition",
    "__version__",
]
