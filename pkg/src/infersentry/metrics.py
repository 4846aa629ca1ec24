"""Deviation, exceedance-rate and latency statistics, plus the joint gate.

Everything in this module is a pure function over immutable values. Exceedance
counts are carried as exact integers next to their float ratios so that a
pass/fail decision never hinges on how 1/N rounds. Latencies are integer
nanoseconds end to end; milliseconds only ever appear in rendered output.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Protocol, Sequence

# Tolerance for the simplex-sum check. Well above accumulated double rounding
# for a few thousand classes, well below any real mass defect.
SUM_ABS_TOLERANCE = 1e-9

DEFAULT_T_STAR = 0.05
DEFAULT_STER_MAX = 0.0
DEFAULT_BUDGET_NS = 100_000_000


class MetricsError(ValueError):
    """Invalid input to a metrics operation."""


@dataclass(frozen=True)
class SoftmaxVector:
    """Probability vector over at least two classes, summing to 1 within tolerance."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.probs) < 2:
            raise MetricsError("softmax vector needs at least 2 classes")
        total = 0.0
        for p in self.probs:
            if not 0.0 <= p <= 1.0:  # comparison is False for NaN, so NaN is rejected too
                raise MetricsError(f"probability {p!r} outside [0, 1]")
            total += p
        if abs(total - 1.0) > SUM_ABS_TOLERANCE:
            raise MetricsError(f"probabilities sum to {total!r}, not 1")

    def __len__(self) -> int:
        return len(self.probs)

    def argmax(self) -> int:
        """Index of the largest component; ties resolve to the lowest index."""
        best = 0
        for k in range(1, len(self.probs)):
            if self.probs[k] > self.probs[best]:
                best = k
        return best


@dataclass(frozen=True)
class DeviationSample:
    """One activation's deviation from its reference, already classified."""

    activation_index: int
    delta: float
    exceeded: bool

    @classmethod
    def classify(cls, activation_index: int, delta: float, t_star: float) -> "DeviationSample":
        if not delta >= 0.0:
            raise MetricsError(f"deviation {delta!r} must be >= 0")
        return cls(activation_index=activation_index, delta=delta, exceeded=delta > t_star)


@dataclass(frozen=True)
class LatencySample:
    activation_index: int
    latency_ns: int

    def __post_init__(self) -> None:
        if self.latency_ns <= 0:
            raise MetricsError(f"latency {self.latency_ns!r} ns must be positive")


@dataclass(frozen=True)
class Thresholds:
    """Gate parameters: deviation threshold, exceedance ceiling, latency budget."""

    t_star: float = DEFAULT_T_STAR
    ster_max: float = DEFAULT_STER_MAX
    budget_ns: int = DEFAULT_BUDGET_NS

    def __post_init__(self) -> None:
        if not 0.0 < self.t_star < 1.0:
            raise MetricsError(f"t_star {self.t_star!r} outside (0, 1)")
        if not 0.0 <= self.ster_max <= 1.0:
            raise MetricsError(f"ster_max {self.ster_max!r} outside [0, 1]")
        if self.budget_ns <= 0:
            raise MetricsError(f"budget_ns {self.budget_ns!r} must be positive")


@dataclass(frozen=True)
class ConditionSummary:
    """Per-condition aggregate: one row of a results table."""

    condition_id: str
    ster: float
    exceed_count: int
    delta_mean: float
    delta_max: float
    lat_mean_ns: int
    lat_sd_ns: int
    lat_p99_ns: int
    n_activations: int
    argmax_match_rate: float


@dataclass(frozen=True)
class Verdict:
    """Joint gate outcome for one condition."""

    condition_id: str
    ster_pass: bool
    latency_pass: bool
    overall_pass: bool
    ster_value: float
    ster_max: float
    p99_ns: int
    budget_ns: int
    budget_breach_fraction: float


class RecordLike(Protocol):
    """What summarization needs from an activation record."""

    condition_id: str
    input_index: int
    latency_ns: int
    delta: float
    argmax: int


class ProfileLike(Protocol):
    def vector(self, input_index: int) -> SoftmaxVector: ...


def softmax(logits: Sequence[float]) -> SoftmaxVector:
    """Numerically stable softmax: subtract the max, exponentiate, normalize.

    Summation runs in ascending index order so the result is bit-reproducible
    for identical inputs.
    """
    values = [float(v) for v in logits]
    if len(values) < 2:
        raise MetricsError("softmax needs at least 2 logits")
    for v in values:
        if not math.isfinite(v):
            raise MetricsError(f"non-finite logit {v!r}")
    peak = max(values)
    exps = [math.exp(v - peak) for v in values]
    total = 0.0
    for e in exps:
        total += e
    return SoftmaxVector(tuple(e / total for e in exps))


def compute_delta(observed: SoftmaxVector, reference: SoftmaxVector) -> float:
    """L-infinity distance between two probability vectors of equal width."""
    if len(observed) != len(reference):
        raise MetricsError(
            f"dimension mismatch: observed has {len(observed)} classes, "
            f"reference has {len(reference)}"
        )
    worst = 0.0
    for a, b in zip(observed.probs, reference.probs):
        d = abs(a - b)
        if d > worst:
            worst = d
    return worst


def compute_ster(deltas: Sequence[float], t_star: float) -> tuple[float, int]:
    """Exceedance rate over a delta sequence.

    A sample counts only when strictly greater than t_star; a deviation that
    lands exactly on the threshold is in-spec. Returns (rate, exact count).
    """
    n = len(deltas)
    if n == 0:
        raise MetricsError("exceedance rate over zero activations is undefined")
    exceed = 0
    for d in deltas:
        if d > t_star:
            exceed += 1
    return exceed / n, exceed


def percentile_nearest_rank(samples: Sequence[int], p: float) -> int:
    """Nearest-rank percentile: the ceil(p*N)-th smallest sample, no interpolation.

    The rank comes out of exact rational arithmetic, so float dust in p*N can
    never shift it; p=0.99 over 100 samples selects rank 99, not 100.
    """
    n = len(samples)
    if n == 0:
        raise MetricsError("percentile of an empty sample set is undefined")
    if not 0.0 < p <= 1.0:
        raise MetricsError(f"percentile fraction {p!r} outside (0, 1]")
    rank = math.ceil(Fraction(p) * n)
    return sorted(samples)[rank - 1]


def argmax_match_rate(records: Sequence[RecordLike], profile: ProfileLike) -> float:
    """Fraction of records whose argmax agrees with the reference profile's."""
    if not records:
        raise MetricsError("match rate over zero records is undefined")
    ref_cache: dict[int, int] = {}
    matches = 0
    for rec in records:
        idx = rec.input_index
        ref = ref_cache.get(idx)
        if ref is None:
            try:
                ref = profile.vector(idx).argmax()
            except KeyError:
                raise MetricsError(f"no reference profile entry for input {idx}") from None
            ref_cache[idx] = ref
        if rec.argmax == ref:
            matches += 1
    return matches / len(records)


def summarize_condition(
    records: Iterable[RecordLike],
    profile: ProfileLike,
    thresholds: Thresholds,
) -> ConditionSummary:
    """Collapse one condition's activation records into its table row.

    The latency SD is the population SD pooled over every activation in the
    condition. The delta mean is accumulated in exact rational arithmetic and
    converted to float once, so delta_mean <= delta_max holds even at the ulp
    level.
    """
    recs = list(records)
    if not recs:
        raise MetricsError("cannot summarize a condition with no records")
    condition_id = recs[0].condition_id
    for rec in recs:
        if rec.condition_id != condition_id:
            raise MetricsError(
                f"records mix conditions {condition_id!r} and {rec.condition_id!r}"
            )
    deltas = [r.delta for r in recs]
    ster, exceed = compute_ster(deltas, thresholds.t_star)
    delta_mean = float(sum((Fraction(d) for d in deltas), Fraction(0)) / len(deltas))
    delta_max = max(deltas)
    lats = [r.latency_ns for r in recs]
    lat_mean_ns = round(Fraction(sum(lats), len(lats)))
    lat_sd_ns = round(statistics.pstdev(lats))
    lat_p99_ns = percentile_nearest_rank(lats, 0.99)
    return ConditionSummary(
        condition_id=condition_id,
        ster=ster,
        exceed_count=exceed,
        delta_mean=delta_mean,
        delta_max=delta_max,
        lat_mean_ns=lat_mean_ns,
        lat_sd_ns=lat_sd_ns,
        lat_p99_ns=lat_p99_ns,
        n_activations=len(recs),
        argmax_match_rate=argmax_match_rate(recs, profile),
    )


def evaluate_joint(summary: ConditionSummary, thresholds: Thresholds) -> Verdict:
    """Joint acceptance: output stability AND timing must both hold.

    The breach fraction is how far P99 sits above the budget, relative to the
    budget; zero when inside it. Computed from the integer nanosecond values.
    """
    ster_pass = summary.ster <= thresholds.ster_max
    latency_pass = summary.lat_p99_ns <= thresholds.budget_ns
    if latency_pass:
        breach = 0.0
    else:
        breach = (summary.lat_p99_ns - thresholds.budget_ns) / thresholds.budget_ns
    return Verdict(
        condition_id=summary.condition_id,
        ster_pass=ster_pass,
        latency_pass=latency_pass,
        overall_pass=ster_pass and latency_pass,
        ster_value=summary.ster,
        ster_max=thresholds.ster_max,
        p99_ns=summary.lat_p99_ns,
        budget_ns=thresholds.budget_ns,
        budget_breach_fraction=breach,
    )
