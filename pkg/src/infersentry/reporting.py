"""Rendering of results: tables, verdict text, latency CDFs, scatter exports.

Milliseconds appear here and only here; everything upstream carries integer
nanoseconds. CSV and JSON renderings round-trip exactly (floats via repr),
the text table is render-only. Golden table fixtures shipped with the package
give the formatting tests and the replay flow known-correct rows.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .metrics import (
    ConditionSummary,
    MetricsError,
    Thresholds,
    Verdict,
    evaluate_joint,
)
from .protocol import (
    ActivationRecord,
    BundleError,
    _summary_to_dict,
    _verdict_to_dict,
    summary_from_dict,
)

TABLE_FIXTURE_FORMAT = "infersentry-table-fixture/1"
LATENCY_FIXTURE_FORMAT = "infersentry-latency-fixture/1"
REPORT_FORMAT = "infersentry-report/1"

SUMMARY_COLUMNS = (
    "condition_id",
    "ster",
    "exceed_count",
    "delta_mean",
    "delta_max",
    "lat_mean_ns",
    "lat_sd_ns",
    "lat_p99_ns",
    "n_activations",
    "argmax_match_rate",
)


def _fmt_ms(ns: int) -> str:
    return f"{ns / 1e6:.1f} ms"


# -- latency CDFs -------------------------------------------------------------


@dataclass(frozen=True)
class CdfSeries:
    """Empirical latency CDF: (latency_ns, cumulative fraction) steps."""

    condition_id: str
    points: tuple[tuple[int, float], ...]

    def fraction_at_or_below(self, latency_ns: int) -> float:
        best = 0.0
        for x, frac in self.points:
            if x <= latency_ns:
                best = frac
            else:
                break
        return best


def build_cdf(records: Sequence[ActivationRecord]) -> CdfSeries:
    """Empirical CDF over a condition's latencies.

    Each distinct latency contributes one step whose fraction is the exact
    count/N division, so the final point is exactly 1.0.
    """
    recs = list(records)
    if not recs:
        raise MetricsError("cdf over zero records is undefined")
    condition_id = recs[0].condition_id
    lats = sorted(r.latency_ns for r in recs)
    n = len(lats)
    points: list[tuple[int, float]] = []
    seen = 0
    for i, v in enumerate(lats):
        seen += 1
        if i + 1 == n or lats[i + 1] != v:
            points.append((v, seen / n))
    return CdfSeries(condition_id=condition_id, points=tuple(points))


def cdf_csv(series: CdfSeries) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(("latency_ns", "cum_fraction"))
    for x, frac in series.points:
        writer.writerow((x, repr(frac)))
    return out.getvalue()


# -- summary tables ------------------------------------------------------------


def _text_row(s: ConditionSummary) -> str:
    return (
        f"{s.condition_id:<16} "
        f"{s.ster:>8.4f} "
        f"{s.delta_mean:>10.4f} "
        f"{_fmt_ms(s.lat_mean_ns):>12} "
        f"{_fmt_ms(s.lat_sd_ns):>12} "
        f"{_fmt_ms(s.lat_p99_ns):>12}"
    )


_TEXT_HEADER = (
    f"{'condition':<16} "
    f"{'STER':>8} "
    f"{'delta_mean':>10} "
    f"{'lat_mean':>12} "
    f"{'lat_sd':>12} "
    f"{'p99':>12}"
)


def render_summary_table(summaries: Sequence[ConditionSummary], fmt: str = "text") -> str:
    """Render condition rows as 'text', 'csv', or 'json'.

    The csv and json forms are exact: parse_summary_table() restores equal
    ConditionSummary values, bit-for-bit on the float fields.
    """
    if fmt == "text":
        lines = [_TEXT_HEADER, "-" * len(_TEXT_HEADER)]
        lines.extend(_text_row(s) for s in summaries)
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow(
                (
                    s.condition_id,
                    repr(s.ster),
                    s.exceed_count,
                    repr(s.delta_mean),
                    repr(s.delta_max),
                    s.lat_mean_ns,
                    s.lat_sd_ns,
                    s.lat_p99_ns,
                    s.n_activations,
                    repr(s.argmax_match_rate),
                )
            )
        return out.getvalue()
    if fmt == "json":
        doc = {
            "format": REPORT_FORMAT,
            "conditions": [_summary_to_dict(s) for s in summaries],
        }
        return json.dumps(doc, indent=1) + "\n"
    raise ValueError(f"unknown table format {fmt!r}; use text, csv, or json")


def parse_summary_table(doc: str, fmt: str) -> list[ConditionSummary]:
    if fmt == "csv":
        reader = csv.reader(io.StringIO(doc))
        header = next(reader, None)
        if header is None or tuple(header) != SUMMARY_COLUMNS:
            raise BundleError(f"summary csv has header {header!r}")
        out = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(SUMMARY_COLUMNS):
                raise BundleError(f"summary csv row has {len(row)} columns: {row!r}")
            out.append(summary_from_dict(dict(zip(SUMMARY_COLUMNS, row))))
        return out
    if fmt == "json":
        try:
            raw = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise BundleError(f"summary json does not parse: {exc}") from exc
        if raw.get("format") != REPORT_FORMAT:
            raise BundleError(f"summary json format {raw.get('format')!r} not recognized")
        return [summary_from_dict(entry) for entry in raw.get("conditions", [])]
    raise ValueError(f"unknown table format {fmt!r}; only csv and json parse back")


# -- verdict text ---------------------------------------------------------------


def verdict_line(v: Verdict) -> str:
    if v.overall_pass:
        return f"{v.condition_id}: PASS"
    problems = []
    if not v.ster_pass:
        problems.append(
            f"stability: STER {v.ster_value:.4f} exceeds STER_max {v.ster_max:.4f}"
        )
    if not v.latency_pass:
        pct = 100.0 * v.budget_breach_fraction
        problems.append(
            f"latency: P99 {v.p99_ns / 1e6:.1f} ms exceeds budget by {pct:.1f}%"
        )
    return f"{v.condition_id}: FAIL " + "; ".join(problems)


def render_verdicts(
    summaries: Sequence[ConditionSummary],
    thresholds: Thresholds,
    aborted: Sequence[tuple[str, str]] = (),
) -> tuple[str, int]:
    """Per-condition verdict lines plus an overall line.

    Returns (text, exit_status): status 0 only when every condition passed
    both gates and nothing aborted. No conditions at all is a failure, not a
    vacuous pass.
    """
    lines = []
    passed = 0
    verdicts = [evaluate_joint(s, thresholds) for s in summaries]
    for v in verdicts:
        lines.append(verdict_line(v))
        if v.overall_pass:
            passed += 1
    for cid, reason in aborted:
        lines.append(f"{cid}: FAIL aborted: {reason}")
    total = len(verdicts) + len(aborted)
    if total == 0:
        lines.append("overall: FAIL (no conditions)")
        return "\n".join(lines) + "\n", 1
    ok = passed == total
    lines.append(
        f"overall: {'PASS' if ok else 'FAIL'} ({passed}/{total} conditions pass)"
    )
    return "\n".join(lines) + "\n", 0 if ok else 1


def verdicts_json(
    summaries: Sequence[ConditionSummary],
    thresholds: Thresholds,
    aborted: Sequence[tuple[str, str]] = (),
) -> str:
    entries = [_verdict_to_dict(evaluate_joint(s, thresholds)) for s in summaries]
    for cid, reason in aborted:
        entries.append({"condition_id": cid, "overall_pass": False, "aborted": reason})
    doc = {
        "format": REPORT_FORMAT,
        "thresholds": {
            "t_star": thresholds.t_star,
            "ster_max": thresholds.ster_max,
            "budget_ns": thresholds.budget_ns,
        },
        "verdicts": entries,
    }
    return json.dumps(doc, indent=1) + "\n"


# -- scatter export --------------------------------------------------------------


@dataclass(frozen=True)
class ScatterPoint:
    backend_label: str
    condition_id: str
    ster: float
    lat_mean_ns: int


def build_scatter(
    groups: Sequence[tuple[str, Sequence[ConditionSummary]]],
) -> list[ScatterPoint]:
    """One point per (backend label, condition row), in the order given."""
    points = []
    for label, summaries in groups:
        for s in summaries:
            points.append(
                ScatterPoint(
                    backend_label=label,
                    condition_id=s.condition_id,
                    ster=s.ster,
                    lat_mean_ns=s.lat_mean_ns,
                )
            )
    return points


def scatter_csv(points: Sequence[ScatterPoint]) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(("backend", "condition_id", "ster", "lat_mean_ns"))
    for pt in points:
        writer.writerow((pt.backend_label, pt.condition_id, repr(pt.ster), pt.lat_mean_ns))
    return out.getvalue()


# -- bundled golden fixtures -------------------------------------------------------


def bundled_fixture_path(name: str) -> Path:
    here = Path(__file__).parent / "fixtures" / f"{name}.json"
    if not here.exists():
        available = sorted(q.stem for q in (Path(__file__).parent / "fixtures").glob("*.json"))
        raise BundleError(f"no bundled fixture {name!r}; available: {available}")
    return here


def load_table_fixture(path: str | Path) -> tuple[Thresholds, list[ConditionSummary]]:
    """Load a golden results table: thresholds plus finished summary rows."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as exc:
        raise BundleError(f"cannot read fixture {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"fixture {p} is not valid JSON: {exc}") from exc
    if raw.get("format") != TABLE_FIXTURE_FORMAT:
        raise BundleError(f"fixture {p}: format {raw.get('format')!r} not recognized")
    th = raw.get("thresholds", {})
    thresholds = Thresholds(
        t_star=float(th.get("t_star", 0.05)),
        ster_max=float(th.get("ster_max", 0.0)),
        budget_ns=int(th.get("budget_ns", 100_000_000)),
    )
    rows = raw.get("rows")
    if not isinstance(rows, list) or not rows:
        raise BundleError(f"fixture {p} has no rows")
    return thresholds, [summary_from_dict(r) for r in rows]


def load_latency_fixture(path: str | Path) -> list[ActivationRecord]:
    """Load a synthetic latency series as activation records (trial 0)."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as exc:
        raise BundleError(f"cannot read fixture {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"fixture {p} is not valid JSON: {exc}") from exc
    if raw.get("format") != LATENCY_FIXTURE_FORMAT:
        raise BundleError(f"fixture {p}: format {raw.get('format')!r} not recognized")
    try:
        cid = str(raw["condition_id"])
        delta = float(raw.get("delta", 0.0))
        argmax = int(raw.get("argmax", 0))
        input_index = int(raw.get("input_index", 0))
        lats = raw["latencies_ns"]
        return [
            ActivationRecord(
                condition_id=cid,
                trial_index=0,
                activation_index=i,
                input_index=input_index,
                latency_ns=int(v),
                delta=delta,
                argmax=argmax,
            )
            for i, v in enumerate(lats)
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"fixture {p} is malformed: {exc}") from exc


def summary_doc_from_table(
    thresholds: Thresholds, summaries: Sequence[ConditionSummary]
) -> dict:
    """Build a replayable summary.json document from finished table rows.

    Lets a results table (e.g. a bundled golden fixture) be dropped into a
    results directory and pushed through the verify flow without rerunning
    anything.
    """
    conditions = []
    for s in summaries:
        conditions.append(
            {
                "condition_id": s.condition_id,
                "aborted": False,
                "abort_reason": None,
                "excluded_activations": 0,
                "trials_completed": 0,
                "per_trial": [],
                "metrics": _summary_to_dict(s),
                "verdict": _verdict_to_dict(evaluate_joint(s, thresholds)),
            }
        )
    return {
        "format": "infersentry-summary/1",
        "thresholds": {
            "t_star": thresholds.t_star,
            "ster_max": thresholds.ster_max,
            "budget_ns": thresholds.budget_ns,
        },
        "conditions": conditions,
    }
