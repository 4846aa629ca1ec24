"""Experiment protocol: plans, baseline capture, condition runs, result bundles.

A plan fully determines an experiment: the test set seed, the backend tree,
the thresholds, and an ordered list of conditions (each a set of stressors).
Running it produces a results bundle on disk: the zero-load reference profile,
one records CSV per condition appended as activations complete, an aggregate
summary, and host metadata. Latencies are measured with perf_counter_ns
around exactly one backend invocation; input generation, deviation math and
persistence all sit outside the timed window.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Sequence

import psutil

from .backends import (
    Backend,
    BackendError,
    DriftCapError,
    build_backend,
    generate_test_set,
)
from .metrics import (
    ConditionSummary,
    SoftmaxVector,
    Thresholds,
    Verdict,
    compute_delta,
    evaluate_joint,
    percentile_nearest_rank,
    summarize_condition,
)
from .stressors import StressorError, StressorSpec, orchestrate

# Untimed activations run once per condition before any trial, so caches,
# allocators and (for external backends) the child process are warm before
# the first timed window opens.
WARMUP_ACTIVATIONS = 50

PLAN_FORMAT = "infersentry-plan/1"
PROFILE_FORMAT = "infersentry-profile/1"
SUMMARY_FORMAT = "infersentry-summary/1"
META_FORMAT = "infersentry-meta/1"

MEASUREMENT_SCOPE = (
    "latency window covers one backend invocation including softmax; "
    "input generation, deviation computation and persistence are outside it; "
    "external backends include IPC round-trip time inside the window"
)


class PlanError(ValueError):
    """A plan file is missing, malformed, or self-contradictory."""


class BundleError(ValueError):
    """A results bundle is missing pieces or fails to parse."""


@dataclass(frozen=True)
class TestSetSpec:
    __test__ = False  # "Test" prefix is domain naming, not a test-runner hook

    seed: int
    count: int = 500
    f_in: int = 64

    def __post_init__(self) -> None:
        if self.count < 1:
            raise PlanError("test_set.count must be >= 1")
        if self.f_in < 2:
            raise PlanError("test_set.f_in must be >= 2")


@dataclass(frozen=True)
class Condition:
    condition_id: str
    stressors: tuple[StressorSpec, ...]


@dataclass(frozen=True)
class ExperimentPlan:
    test_set: TestSetSpec
    backend: dict
    thresholds: Thresholds
    conditions: tuple[Condition, ...]
    trials_per_condition: int = 10
    activations_per_trial: int = 500
    baseline_passes: int = 10
    settle_ms: int = 2000
    pin_measurement_core: int | None = None

    def __post_init__(self) -> None:
        if self.trials_per_condition < 1:
            raise PlanError("trials_per_condition must be >= 1")
        if self.activations_per_trial < 1:
            raise PlanError("activations_per_trial must be >= 1")
        if self.baseline_passes < 1:
            raise PlanError("baseline_passes must be >= 1")
        if self.settle_ms < 0:
            raise PlanError("settle_ms must be >= 0")
        if self.pin_measurement_core is not None and self.pin_measurement_core < 0:
            raise PlanError("pin_measurement_core must be >= 0")
        if not self.conditions:
            raise PlanError("plan needs at least one condition")
        seen = set()
        for cond in self.conditions:
            if cond.condition_id in seen:
                raise PlanError(f"duplicate condition_id {cond.condition_id!r}")
            seen.add(cond.condition_id)

    def condition(self, condition_id: str) -> Condition:
        for cond in self.conditions:
            if cond.condition_id == condition_id:
                return cond
        known = [c.condition_id for c in self.conditions]
        raise PlanError(f"unknown condition {condition_id!r}; plan has {known}")

    def to_dict(self) -> dict:
        return {
            "format": PLAN_FORMAT,
            "test_set": {
                "seed": self.test_set.seed,
                "count": self.test_set.count,
                "f_in": self.test_set.f_in,
            },
            "backend": self.backend,
            "thresholds": {
                "t_star": self.thresholds.t_star,
                "ster_max": self.thresholds.ster_max,
                "budget_ns": self.thresholds.budget_ns,
            },
            "trials_per_condition": self.trials_per_condition,
            "activations_per_trial": self.activations_per_trial,
            "baseline_passes": self.baseline_passes,
            "settle_ms": self.settle_ms,
            "pin_measurement_core": self.pin_measurement_core,
            "conditions": [
                {
                    "condition_id": c.condition_id,
                    "stressors": [s.to_dict() for s in c.stressors],
                }
                for c in self.conditions
            ],
        }


@dataclass(frozen=True)
class ReferenceProfile:
    """Per-input zero-load output vectors every later activation compares against."""

    vectors: tuple[SoftmaxVector, ...]
    k_passes: int
    backend_descriptor: dict
    test_set: TestSetSpec
    created_utc: str

    def vector(self, input_index: int) -> SoftmaxVector:
        if not 0 <= input_index < len(self.vectors):
            raise KeyError(input_index)
        return self.vectors[input_index]


@dataclass(frozen=True)
class ActivationRecord:
    """One timed inference. 'output' is None for records loaded back from CSV."""

    condition_id: str
    trial_index: int
    activation_index: int
    input_index: int
    latency_ns: int
    delta: float
    argmax: int
    output: SoftmaxVector | None = None


@dataclass
class ConditionRunResult:
    condition_id: str
    records: list[ActivationRecord]
    aborted: bool
    abort_reason: str | None
    achieved_per_trial: list[list[dict]]
    excluded_activations: int
    trials_completed: int


@dataclass
class ConditionOutcome:
    condition_id: str
    summary: ConditionSummary | None
    verdict: Verdict | None
    per_trial: list[dict]
    aborted: bool
    abort_reason: str | None
    excluded_activations: int
    trials_completed: int
    achieved_per_trial: list[list[dict]]


@dataclass
class ProtocolResult:
    profile: ReferenceProfile
    outcomes: list[ConditionOutcome]
    thresholds: Thresholds
    out_dir: Path

    @property
    def gate_pass(self) -> bool:
        """True only when every condition completed and passed both gates."""
        for oc in self.outcomes:
            if oc.aborted or oc.verdict is None or not oc.verdict.overall_pass:
                return False
        return True


# -- plan loading -----------------------------------------------------------

_TOP_LEVEL_KEYS = {
    "format",
    "test_set",
    "backend",
    "thresholds",
    "conditions",
    "trials_per_condition",
    "activations_per_trial",
    "baseline_passes",
    "settle_ms",
    "pin_measurement_core",
}


def _require_int(raw: dict, key: str, where: str, default: int | None = None) -> int:
    if key not in raw:
        if default is None:
            raise PlanError(f"{where}.{key} is required")
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise PlanError(f"{where}.{key} must be an integer, got {value!r}")
    return value


def plan_from_dict(raw: dict) -> ExperimentPlan:
    """Build a plan from parsed JSON, rejecting anything not in the format.

    Unknown keys fail with the offending path rather than being ignored, so a
    typo in a threshold name can never silently weaken a gate.
    """
    if not isinstance(raw, dict):
        raise PlanError(f"plan must be a JSON object, got {type(raw).__name__}")
    unknown = sorted(set(raw) - _TOP_LEVEL_KEYS)
    if unknown:
        raise PlanError(f"plan has unknown top-level keys {unknown}")
    fmt = raw.get("format", PLAN_FORMAT)
    if fmt != PLAN_FORMAT:
        raise PlanError(f"format: expected {PLAN_FORMAT!r}, got {fmt!r}")

    if "test_set" not in raw:
        raise PlanError("test_set is required")
    ts_raw = raw["test_set"]
    if not isinstance(ts_raw, dict):
        raise PlanError("test_set must be an object")
    ts_unknown = sorted(set(ts_raw) - {"seed", "count", "f_in"})
    if ts_unknown:
        raise PlanError(f"test_set has unknown keys {ts_unknown}")
    test_set = TestSetSpec(
        seed=_require_int(ts_raw, "seed", "test_set"),
        count=_require_int(ts_raw, "count", "test_set", default=500),
        f_in=_require_int(ts_raw, "f_in", "test_set", default=64),
    )

    if "backend" not in raw:
        raise PlanError("backend is required")
    backend_desc = raw["backend"]
    try:
        build_backend(backend_desc, test_set.f_in)
    except ValueError as exc:
        raise PlanError(f"backend: {exc}") from exc

    th_raw = raw.get("thresholds", {})
    if not isinstance(th_raw, dict):
        raise PlanError("thresholds must be an object")
    th_unknown = sorted(set(th_raw) - {"t_star", "ster_max", "budget_ns"})
    if th_unknown:
        raise PlanError(f"thresholds has unknown keys {th_unknown}")
    try:
        thresholds = Thresholds(
            t_star=float(th_raw.get("t_star", 0.05)),
            ster_max=float(th_raw.get("ster_max", 0.0)),
            budget_ns=_require_int(th_raw, "budget_ns", "thresholds", default=100_000_000),
        )
    except ValueError as exc:
        raise PlanError(f"thresholds: {exc}") from exc

    conds_raw = raw.get("conditions")
    if not isinstance(conds_raw, list) or not conds_raw:
        raise PlanError("conditions must be a non-empty array")
    conditions = []
    for i, c_raw in enumerate(conds_raw):
        where = f"conditions[{i}]"
        if not isinstance(c_raw, dict):
            raise PlanError(f"{where} must be an object")
        c_unknown = sorted(set(c_raw) - {"condition_id", "stressors"})
        if c_unknown:
            raise PlanError(f"{where} has unknown keys {c_unknown}")
        cid = c_raw.get("condition_id")
        if not isinstance(cid, str) or not cid:
            raise PlanError(f"{where}.condition_id must be a non-empty string")
        s_raw = c_raw.get("stressors", [])
        if not isinstance(s_raw, list):
            raise PlanError(f"{where}.stressors must be an array")
        stressors = []
        for j, entry in enumerate(s_raw):
            try:
                stressors.append(StressorSpec.from_dict(entry))
            except StressorError as exc:
                raise PlanError(f"{where}.stressors[{j}]: {exc}") from exc
        conditions.append(Condition(condition_id=cid, stressors=tuple(stressors)))

    pin = raw.get("pin_measurement_core")
    if pin is not None and (isinstance(pin, bool) or not isinstance(pin, int)):
        raise PlanError(f"pin_measurement_core must be an integer or null, got {pin!r}")

    return ExperimentPlan(
        test_set=test_set,
        backend=backend_desc,
        thresholds=thresholds,
        conditions=tuple(conditions),
        trials_per_condition=_require_int(raw, "trials_per_condition", "plan", default=10),
        activations_per_trial=_require_int(raw, "activations_per_trial", "plan", default=500),
        baseline_passes=_require_int(raw, "baseline_passes", "plan", default=10),
        settle_ms=_require_int(raw, "settle_ms", "plan", default=2000),
        pin_measurement_core=pin,
    )


def load_plan(path: str | Path) -> ExperimentPlan:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise PlanError(f"cannot read plan {p}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan {p} is not valid JSON: {exc}") from exc
    return plan_from_dict(raw)


def bundled_plan_path(name: str) -> Path:
    """Path of a plan shipped inside the package (e.g. 'contention-ladder')."""
    here = Path(__file__).parent / "plans" / f"{name}.json"
    if not here.exists():
        available = sorted(q.stem for q in (Path(__file__).parent / "plans").glob("*.json"))
        raise PlanError(f"no bundled plan {name!r}; available: {available}")
    return here


# -- measurement ------------------------------------------------------------


@contextlib.contextmanager
def _pinned(core: int | None):
    """Pin the calling thread to one core for the duration, when supported."""
    if core is None:
        yield
        return
    try:
        previous = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {core % (os.cpu_count() or 1)})
    except (AttributeError, OSError):
        yield
        return
    try:
        yield
    finally:
        try:
            os.sched_setaffinity(0, previous)
        except OSError:
            pass


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def capture_baseline(plan: ExperimentPlan, backend: Backend | None = None) -> ReferenceProfile:
    """Run the whole test set K times at zero load and average per component.

    The caller is responsible for the zero-load part: nothing else should be
    stressing the host while this runs. The mean of pass outputs is computed
    as v0 + sum(vk - v0)/K per component, which collapses to the exact bits of
    a single pass when the backend is deterministic; a deterministic backend
    measured against its own profile therefore shows deviation exactly 0.0.

    A backend failure mid-capture propagates; no partial profile exists.
    """
    if backend is None:
        backend = build_backend(plan.backend, plan.test_set.f_in)
    inputs = generate_test_set(plan.test_set.seed, plan.test_set.count, plan.test_set.f_in)
    k = plan.baseline_passes
    backend.start()
    try:
        with _pinned(plan.pin_measurement_core):
            passes = []
            for _ in range(k):
                passes.append([backend.infer(inp) for inp in inputs])
    finally:
        backend.stop()
    vectors = []
    for i in range(len(inputs)):
        outs = [p[i] for p in passes]
        base = outs[0].probs
        comps = []
        for c in range(len(base)):
            acc = 0.0
            for o in outs:
                acc += o.probs[c] - base[c]
            mean_c = base[c] + acc / k
            # rounding guard for nondeterministic backends; a deterministic
            # backend hits acc == 0.0 and takes base[c] unchanged
            if -1e-12 < mean_c < 0.0:
                mean_c = 0.0
            elif 1.0 < mean_c < 1.0 + 1e-12:
                mean_c = 1.0
            comps.append(mean_c)
        vectors.append(SoftmaxVector(tuple(comps)))
    return ReferenceProfile(
        vectors=tuple(vectors),
        k_passes=k,
        backend_descriptor=backend.descriptor(),
        test_set=plan.test_set,
        created_utc=_utc_now(),
    )


def _check_profile_compat(profile: ReferenceProfile, plan: ExperimentPlan) -> None:
    if profile.test_set != plan.test_set:
        raise PlanError(
            f"profile was captured for test set {profile.test_set}, "
            f"plan uses {plan.test_set}"
        )
    if len(profile.vectors) != plan.test_set.count:
        raise PlanError(
            f"profile holds {len(profile.vectors)} vectors, "
            f"plan expects {plan.test_set.count}"
        )


class RecordWriter:
    """Appends activation records to a CSV as they are produced."""

    HEADER = ("condition_id", "trial", "activation", "input", "latency_ns", "delta", "argmax")

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.HEADER)
        self._fh.flush()
        self.rows_written = 0

    def write(self, rec: ActivationRecord) -> None:
        self._writer.writerow(
            (
                rec.condition_id,
                rec.trial_index,
                rec.activation_index,
                rec.input_index,
                rec.latency_ns,
                repr(rec.delta),
                rec.argmax,
            )
        )
        self._fh.flush()
        self.rows_written += 1

    def close(self) -> None:
        self._fh.close()


def load_records(path: str | Path) -> list[ActivationRecord]:
    """Read a records CSV back; floats round-trip exactly via repr."""
    p = Path(path)
    try:
        fh = open(p, newline="")
    except OSError as exc:
        raise BundleError(f"cannot read records {p}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RecordWriter.HEADER:
            raise BundleError(
                f"records {p} has header {header!r}, expected {list(RecordWriter.HEADER)}"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RecordWriter.HEADER):
                raise BundleError(f"records {p} line {lineno}: wrong column count")
            try:
                records.append(
                    ActivationRecord(
                        condition_id=row[0],
                        trial_index=int(row[1]),
                        activation_index=int(row[2]),
                        input_index=int(row[3]),
                        latency_ns=int(row[4]),
                        delta=float(row[5]),
                        argmax=int(row[6]),
                    )
                )
            except ValueError as exc:
                raise BundleError(f"records {p} line {lineno}: {exc}") from exc
    return records


def run_condition(
    plan: ExperimentPlan,
    condition: Condition,
    profile: ReferenceProfile,
    backend: Backend,
    sink: RecordWriter | None = None,
) -> ConditionRunResult:
    """Run every trial of one condition against a warm backend.

    Per trial: start the condition's stressors, settle, then time
    activations_per_trial inferences round-robin over the test set. Only the
    backend call sits inside the perf_counter_ns window. An activation the
    backend refuses because of its drift cap is excluded and counted, never
    silently dropped. A backend or stressor failure aborts the condition;
    records from completed trials are kept. A trial that aborts midway keeps
    its partial rows in the sink as evidence, but they are not returned and
    never aggregated.
    """
    _check_profile_compat(profile, plan)
    inputs = generate_test_set(plan.test_set.seed, plan.test_set.count, plan.test_set.f_in)
    if profile.vectors and len(profile.vectors[0]) != backend.classes and backend.classes:
        raise PlanError(
            f"profile vectors have {len(profile.vectors[0])} classes, "
            f"backend produces {backend.classes}"
        )
    n_inputs = len(inputs)
    core = plan.pin_measurement_core
    records: list[ActivationRecord] = []
    achieved_per_trial: list[list[dict]] = []
    excluded = 0
    aborted = False
    abort_reason: str | None = None
    trials_completed = 0

    backend.start()
    try:
        with _pinned(core):
            for w in range(WARMUP_ACTIVATIONS):
                try:
                    backend.infer(inputs[w % n_inputs])
                except DriftCapError:
                    pass
        for trial in range(plan.trials_per_condition):
            trial_records: list[ActivationRecord] = []

            def body(handles, trial=trial, trial_records=trial_records):
                nonlocal excluded
                clock = time.perf_counter_ns
                infer = backend.infer
                pvecs = profile.vectors
                with _pinned(core):
                    for a in range(plan.activations_per_trial):
                        inp = inputs[a % n_inputs]
                        try:
                            t0 = clock()
                            vec = infer(inp)
                            t1 = clock()
                        except DriftCapError:
                            excluded += 1
                            continue
                        delta = compute_delta(vec, pvecs[inp.input_index])
                        rec = ActivationRecord(
                            condition_id=condition.condition_id,
                            trial_index=trial,
                            activation_index=a,
                            input_index=inp.input_index,
                            latency_ns=t1 - t0,
                            delta=delta,
                            argmax=vec.argmax(),
                            output=vec,
                        )
                        trial_records.append(rec)
                        if sink is not None:
                            sink.write(rec)

            try:
                out = orchestrate(condition.stressors, plan.settle_ms, body)
            except StressorError as exc:
                aborted = True
                abort_reason = (
                    f"condition {condition.condition_id!r} trial {trial}: "
                    f"stressor failure: {exc}"
                )
                break
            except BackendError as exc:
                aborted = True
                abort_reason = (
                    f"condition {condition.condition_id!r} trial {trial}: "
                    f"backend failure: {exc}"
                )
                break
            records.extend(trial_records)
            achieved_per_trial.append(out.achieved)
            trials_completed += 1
    finally:
        try:
            backend.stop()
        except BackendError as exc:
            if not aborted:
                aborted = True
                abort_reason = (
                    f"condition {condition.condition_id!r}: backend shutdown failure: {exc}"
                )
    return ConditionRunResult(
        condition_id=condition.condition_id,
        records=records,
        aborted=aborted,
        abort_reason=abort_reason,
        achieved_per_trial=achieved_per_trial,
        excluded_activations=excluded,
        trials_completed=trials_completed,
    )


def _per_trial_stats(records: Sequence[ActivationRecord]) -> list[dict]:
    import statistics

    by_trial: dict[int, list[int]] = {}
    for rec in records:
        by_trial.setdefault(rec.trial_index, []).append(rec.latency_ns)
    stats = []
    for trial in sorted(by_trial):
        lats = by_trial[trial]
        stats.append(
            {
                "trial": trial,
                "n": len(lats),
                "lat_mean_ns": round(sum(lats) / len(lats)),
                "lat_sd_ns": round(statistics.pstdev(lats)),
                "lat_p99_ns": percentile_nearest_rank(lats, 0.99),
            }
        )
    return stats


def run_protocol(
    plan: ExperimentPlan,
    out_dir: str | Path,
    profile: ReferenceProfile | None = None,
    echo: Callable[[str], None] | None = None,
) -> ProtocolResult:
    """Execute the whole plan and persist the bundle under out_dir.

    Bundle layout: profile.json, records-<condition_id>.csv per condition,
    summary.json, meta.json. A condition abort is recorded and the run moves
    on to the next condition rather than discarding finished work.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    backend = build_backend(plan.backend, plan.test_set.f_in)
    if profile is None:
        if echo:
            echo(f"capturing baseline: {plan.baseline_passes} passes x {plan.test_set.count} inputs")
        profile = capture_baseline(plan, backend=backend)
    else:
        _check_profile_compat(profile, plan)
    save_profile(profile, out / "profile.json")

    outcomes: list[ConditionOutcome] = []
    for condition in plan.conditions:
        writer = RecordWriter(out / f"records-{condition.condition_id}.csv")
        try:
            run = run_condition(plan, condition, profile, backend, sink=writer)
        finally:
            writer.close()
        if run.records:
            summary = summarize_condition(run.records, profile, plan.thresholds)
            verdict = evaluate_joint(summary, plan.thresholds)
            per_trial = _per_trial_stats(run.records)
        else:
            summary = None
            verdict = None
            per_trial = []
        outcomes.append(
            ConditionOutcome(
                condition_id=condition.condition_id,
                summary=summary,
                verdict=verdict,
                per_trial=per_trial,
                aborted=run.aborted,
                abort_reason=run.abort_reason,
                excluded_activations=run.excluded_activations,
                trials_completed=run.trials_completed,
                achieved_per_trial=run.achieved_per_trial,
            )
        )
        if echo:
            if run.aborted:
                echo(f"{condition.condition_id}: ABORTED ({run.abort_reason})")
            elif verdict is not None:
                state = "pass" if verdict.overall_pass else "FAIL"
                echo(
                    f"{condition.condition_id}: {state} "
                    f"(ster={summary.ster:.4f}, p99={summary.lat_p99_ns / 1e6:.1f} ms)"
                )
    result = ProtocolResult(
        profile=profile, outcomes=outcomes, thresholds=plan.thresholds, out_dir=out
    )
    save_summary(result, out / "summary.json")
    save_meta(plan, result, out / "meta.json")
    return result


# -- bundle persistence ------------------------------------------------------


def save_profile(profile: ReferenceProfile, path: str | Path) -> None:
    doc = {
        "format": PROFILE_FORMAT,
        "k_passes": profile.k_passes,
        "backend": profile.backend_descriptor,
        "test_set": {
            "seed": profile.test_set.seed,
            "count": profile.test_set.count,
            "f_in": profile.test_set.f_in,
        },
        "created_utc": profile.created_utc,
        "vectors": [list(v.probs) for v in profile.vectors],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_profile(path: str | Path) -> ReferenceProfile:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as exc:
        raise BundleError(f"cannot read profile {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"profile {p} is not valid JSON: {exc}") from exc
    if raw.get("format") != PROFILE_FORMAT:
        raise BundleError(f"profile {p}: format {raw.get('format')!r} not recognized")
    try:
        ts = raw["test_set"]
        test_set = TestSetSpec(seed=ts["seed"], count=ts["count"], f_in=ts["f_in"])
        vectors = tuple(SoftmaxVector(tuple(float(x) for x in v)) for v in raw["vectors"])
        return ReferenceProfile(
            vectors=vectors,
            k_passes=int(raw["k_passes"]),
            backend_descriptor=raw["backend"],
            test_set=test_set,
            created_utc=str(raw.get("created_utc", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"profile {p} is malformed: {exc}") from exc


def _summary_to_dict(s: ConditionSummary) -> dict:
    return {
        "condition_id": s.condition_id,
        "ster": s.ster,
        "exceed_count": s.exceed_count,
        "delta_mean": s.delta_mean,
        "delta_max": s.delta_max,
        "lat_mean_ns": s.lat_mean_ns,
        "lat_sd_ns": s.lat_sd_ns,
        "lat_p99_ns": s.lat_p99_ns,
        "n_activations": s.n_activations,
        "argmax_match_rate": s.argmax_match_rate,
    }


def summary_from_dict(raw: dict) -> ConditionSummary:
    try:
        return ConditionSummary(
            condition_id=str(raw["condition_id"]),
            ster=float(raw["ster"]),
            exceed_count=int(raw["exceed_count"]),
            delta_mean=float(raw["delta_mean"]),
            delta_max=float(raw["delta_max"]),
            lat_mean_ns=int(raw["lat_mean_ns"]),
            lat_sd_ns=int(raw["lat_sd_ns"]),
            lat_p99_ns=int(raw["lat_p99_ns"]),
            n_activations=int(raw["n_activations"]),
            argmax_match_rate=float(raw["argmax_match_rate"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"condition summary is malformed: {exc}") from exc


def _verdict_to_dict(v: Verdict) -> dict:
    return {
        "condition_id": v.condition_id,
        "ster_pass": v.ster_pass,
        "latency_pass": v.latency_pass,
        "overall_pass": v.overall_pass,
        "ster_value": v.ster_value,
        "ster_max": v.ster_max,
        "p99_ns": v.p99_ns,
        "budget_ns": v.budget_ns,
        "budget_breach_fraction": v.budget_breach_fraction,
    }


def save_summary(result: ProtocolResult, path: str | Path) -> None:
    conditions = []
    for oc in result.outcomes:
        entry: dict = {
            "condition_id": oc.condition_id,
            "aborted": oc.aborted,
            "abort_reason": oc.abort_reason,
            "excluded_activations": oc.excluded_activations,
            "trials_completed": oc.trials_completed,
            "per_trial": oc.per_trial,
        }
        entry["metrics"] = _summary_to_dict(oc.summary) if oc.summary else None
        entry["verdict"] = _verdict_to_dict(oc.verdict) if oc.verdict else None
        conditions.append(entry)
    doc = {
        "format": SUMMARY_FORMAT,
        "thresholds": {
            "t_star": result.thresholds.t_star,
            "ster_max": result.thresholds.ster_max,
            "budget_ns": result.thresholds.budget_ns,
        },
        "conditions": conditions,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_summary(path: str | Path) -> tuple[Thresholds, list[dict]]:
    """Return the stored thresholds and the raw per-condition entries."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as exc:
        raise BundleError(f"cannot read summary {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"summary {p} is not valid JSON: {exc}") from exc
    if raw.get("format") != SUMMARY_FORMAT:
        raise BundleError(f"summary {p}: format {raw.get('format')!r} not recognized")
    th = raw.get("thresholds")
    if not isinstance(th, dict):
        raise BundleError(f"summary {p} is missing thresholds")
    try:
        thresholds = Thresholds(
            t_star=float(th["t_star"]),
            ster_max=float(th["ster_max"]),
            budget_ns=int(th["budget_ns"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"summary {p} thresholds are malformed: {exc}") from exc
    conditions = raw.get("conditions")
    if not isinstance(conditions, list):
        raise BundleError(f"summary {p} is missing its conditions array")
    return thresholds, conditions


def save_meta(plan: ExperimentPlan, result: ProtocolResult, path: str | Path) -> None:
    from . import __version__

    doc = {
        "format": META_FORMAT,
        "harness_version": __version__,
        "created_utc": _utc_now(),
        "host": {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "machine": platform.machine(),
            "cpu_count": os.cpu_count(),
            "total_ram_mb": int(psutil.virtual_memory().total / (1 << 20)),
        },
        "measurement_scope": MEASUREMENT_SCOPE,
        "plan": plan.to_dict(),
        "achieved": {
            oc.condition_id: oc.achieved_per_trial for oc in result.outcomes
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_meta(path: str | Path) -> dict:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as exc:
        raise BundleError(f"cannot read meta {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"meta {p} is not valid JSON: {exc}") from exc
    if raw.get("format") != META_FORMAT:
        raise BundleError(f"meta {p}: format {raw.get('format')!r} not recognized")
    return raw
