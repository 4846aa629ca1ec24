"""Rendering exactness: tables, verdict text, CDFs, scatter exports, fixtures."""

from __future__ import annotations

import json

import pytest

from infersentry.metrics import (
    ConditionSummary,
    MetricsError,
    SoftmaxVector,
    Thresholds,
    percentile_nearest_rank,
    summarize_condition,
)
from infersentry.protocol import (
    ActivationRecord,
    BundleError,
    ReferenceProfile,
    TestSetSpec,
    load_summary,
)
from infersentry.reporting import (
    CdfSeries,
    build_cdf,
    build_scatter,
    bundled_fixture_path,
    cdf_csv,
    load_latency_fixture,
    load_table_fixture,
    parse_summary_table,
    render_summary_table,
    render_verdicts,
    scatter_csv,
    summary_doc_from_table,
    verdict_line,
    verdicts_json,
)


def rec(lat: int, i: int = 0) -> ActivationRecord:
    return ActivationRecord(
        condition_id="c",
        trial_index=0,
        activation_index=i,
        input_index=0,
        latency_ns=lat,
        delta=0.0,
        argmax=0,
    )


def one_vector_profile() -> ReferenceProfile:
    return ReferenceProfile(
        vectors=(SoftmaxVector((0.6, 0.4)),),
        k_passes=1,
        backend_descriptor={},
        test_set=TestSetSpec(seed=0, count=1, f_in=2),
        created_utc="",
    )


# -- latency CDFs ---------------------------------------------------------------


def test_cdf_steps_are_exact_fractions():
    cdf = build_cdf([rec(10, 0), rec(10, 1), rec(20, 2), rec(30, 3)])
    assert cdf.points == ((10, 0.5), (20, 0.75), (30, 1.0))
    assert cdf.condition_id == "c"


def test_cdf_last_point_is_exactly_one():
    import random

    rng = random.Random(77)
    for _ in range(20):
        lats = [rng.randrange(1, 10**9) for _ in range(rng.randrange(1, 200))]
        cdf = build_cdf([rec(v, i) for i, v in enumerate(lats)])
        assert cdf.points[-1][1] == 1.0
        assert [x for x, _ in cdf.points] == sorted(set(lats))


def test_cdf_agrees_with_nearest_rank_percentile():
    import random

    rng = random.Random(78)
    lats = [rng.randrange(1, 10**6) for _ in range(500)]
    records = [rec(v, i) for i, v in enumerate(lats)]
    cdf = build_cdf(records)
    p99 = percentile_nearest_rank(lats, 0.99)
    assert cdf.fraction_at_or_below(p99) >= 0.99
    assert cdf.fraction_at_or_below(p99 - 1) < 0.99 or p99 - 1 >= min(lats) == p99


def test_cdf_fraction_lookup():
    cdf = CdfSeries(condition_id="c", points=((10, 0.5), (20, 1.0)))
    assert cdf.fraction_at_or_below(9) == 0.0
    assert cdf.fraction_at_or_below(10) == 0.5
    assert cdf.fraction_at_or_below(15) == 0.5
    assert cdf.fraction_at_or_below(25) == 1.0


def test_cdf_requires_records():
    with pytest.raises(MetricsError):
        build_cdf([])


def test_cdf_csv_round_trips():
    cdf = build_cdf([rec(10, 0), rec(10, 1), rec(30, 2)])
    doc = cdf_csv(cdf)
    lines = doc.strip().splitlines()
    assert lines[0] == "latency_ns,cum_fraction"
    parsed = [(int(a), float(b)) for a, b in (ln.split(",") for ln in lines[1:])]
    assert tuple(parsed) == cdf.points


# -- summary table rendering ------------------------------------------------------


LADDER_TEXT = (
    "condition            STER delta_mean     lat_mean       lat_sd          p99\n"
    "---------------------------------------------------------------------------\n"
    "zero-load          0.0000     0.0000      14.5 ms       0.2 ms      18.6 ms\n"
    "cpu-25             0.0000     0.0000      33.4 ms       1.8 ms     111.4 ms\n"
    "cpu-50             0.0000     0.0000      57.8 ms       3.2 ms     115.8 ms\n"
    "cpu-75             0.0000     0.0000      73.7 ms       4.1 ms     122.1 ms\n"
    "cpu-100            0.0000     0.0000      70.9 ms       3.8 ms     117.0 ms\n"
    "combined           0.0000     0.0000     104.0 ms       5.7 ms     165.1 ms\n"
)

BASELINE_TEXT = (
    "condition            STER delta_mean     lat_mean       lat_sd          p99\n"
    "---------------------------------------------------------------------------\n"
    "gpu-path           0.0000     0.0182      10.6 ms       0.2 ms      10.9 ms\n"
    "cpu-path           0.0000     0.0000      14.5 ms       0.2 ms      18.6 ms\n"
)


def test_text_table_matches_frozen_rendering():
    _, rows = load_table_fixture(bundled_fixture_path("table_contention_ladder"))
    assert render_summary_table(rows, "text") == LADDER_TEXT
    _, rows = load_table_fixture(bundled_fixture_path("table_baseline"))
    assert render_summary_table(rows, "text") == BASELINE_TEXT


def test_csv_and_json_tables_round_trip_exactly():
    _, rows = load_table_fixture(bundled_fixture_path("table_contention_ladder"))
    for fmt in ("csv", "json"):
        doc = render_summary_table(rows, fmt)
        assert parse_summary_table(doc, fmt) == rows


def test_table_format_validation():
    with pytest.raises(ValueError, match="unknown table format"):
        render_summary_table([], "yaml")
    with pytest.raises(ValueError, match="unknown table format"):
        parse_summary_table("", "text")
    with pytest.raises(BundleError, match="header"):
        parse_summary_table("a,b\n", "csv")
    with pytest.raises(BundleError, match="not recognized"):
        parse_summary_table(json.dumps({"format": "x"}), "json")
    with pytest.raises(BundleError, match="does not parse"):
        parse_summary_table("{", "json")


# -- verdict text ------------------------------------------------------------------


LADDER_VERDICTS = (
    "zero-load: PASS\n"
    "cpu-25: FAIL latency: P99 111.4 ms exceeds budget by 11.4%\n"
    "cpu-50: FAIL latency: P99 115.8 ms exceeds budget by 15.8%\n"
    "cpu-75: FAIL latency: P99 122.1 ms exceeds budget by 22.1%\n"
    "cpu-100: FAIL latency: P99 117.0 ms exceeds budget by 17.0%\n"
    "combined: FAIL latency: P99 165.1 ms exceeds budget by 65.1%\n"
    "overall: FAIL (1/6 conditions pass)\n"
)


def test_ladder_verdicts_match_frozen_text():
    thresholds, rows = load_table_fixture(bundled_fixture_path("table_contention_ladder"))
    text, status = render_verdicts(rows, thresholds)
    assert text == LADDER_VERDICTS
    assert status == 1


def test_passing_verdicts_exit_zero():
    thresholds, rows = load_table_fixture(bundled_fixture_path("table_baseline"))
    text, status = render_verdicts(rows, thresholds)
    assert status == 0
    assert text.endswith("overall: PASS (2/2 conditions pass)\n")


def test_verdict_line_reports_both_gate_failures():
    summary = ConditionSummary(
        condition_id="bad",
        ster=0.25,
        exceed_count=25,
        delta_mean=0.1,
        delta_max=0.2,
        lat_mean_ns=150_000_000,
        lat_sd_ns=1_000_000,
        lat_p99_ns=200_000_000,
        n_activations=100,
        argmax_match_rate=0.9,
    )
    thresholds = Thresholds(t_star=0.05, ster_max=0.0, budget_ns=100_000_000)
    from infersentry.metrics import evaluate_joint

    line = verdict_line(evaluate_joint(summary, thresholds))
    assert line == (
        "bad: FAIL stability: STER 0.2500 exceeds STER_max 0.0000; "
        "latency: P99 200.0 ms exceeds budget by 100.0%"
    )


def test_render_verdicts_counts_aborts_as_failures():
    thresholds, rows = load_table_fixture(bundled_fixture_path("table_baseline"))
    text, status = render_verdicts(rows, thresholds, aborted=[("broken", "child died")])
    assert status == 1
    assert "broken: FAIL aborted: child died" in text
    assert text.endswith("overall: FAIL (2/3 conditions pass)\n")


def test_render_verdicts_with_nothing_is_a_failure():
    text, status = render_verdicts([], Thresholds(0.05, 0.0, 100))
    assert status == 1
    assert "overall: FAIL (no conditions)" in text


def test_verdicts_json_structure():
    thresholds, rows = load_table_fixture(bundled_fixture_path("table_contention_ladder"))
    doc = json.loads(verdicts_json(rows, thresholds, aborted=[("broken", "oom")]))
    assert doc["format"] == "infersentry-report/1"
    assert doc["thresholds"]["budget_ns"] == 100_000_000
    assert len(doc["verdicts"]) == 7
    combined = doc["verdicts"][5]
    assert combined["condition_id"] == "combined"
    assert combined["overall_pass"] is False
    assert combined["budget_breach_fraction"] == 0.651
    assert doc["verdicts"][6] == {
        "condition_id": "broken",
        "overall_pass": False,
        "aborted": "oom",
    }


# -- scatter export ------------------------------------------------------------------


def test_scatter_one_point_per_backend_condition_pair():
    _, ladder = load_table_fixture(bundled_fixture_path("table_contention_ladder"))
    _, paths = load_table_fixture(bundled_fixture_path("table_cpu_ladder_paths"))
    points = build_scatter([("ladder", ladder), ("paths", paths)])
    assert len(points) == len(ladder) + len(paths)
    assert points[0].backend_label == "ladder"
    assert points[0].condition_id == "zero-load"
    doc = scatter_csv(points)
    lines = doc.strip().splitlines()
    assert lines[0] == "backend,condition_id,ster,lat_mean_ns"
    assert len(lines) == 1 + len(points)
    assert lines[1] == "ladder,zero-load,0.0,14500000"


def test_scatter_empty():
    assert build_scatter([]) == []
    assert scatter_csv([]) == "backend,condition_id,ster,lat_mean_ns\r\n"


# -- bundled fixtures ---------------------------------------------------------------


def test_bundled_fixture_path_lists_available_on_miss():
    with pytest.raises(BundleError, match="table_contention_ladder"):
        bundled_fixture_path("nope")


def test_table_fixture_contents():
    thresholds, rows = load_table_fixture(bundled_fixture_path("table_contention_ladder"))
    assert thresholds == Thresholds(t_star=0.05, ster_max=0.0, budget_ns=100_000_000)
    assert [r.condition_id for r in rows] == [
        "zero-load", "cpu-25", "cpu-50", "cpu-75", "cpu-100", "combined",
    ]
    combined = rows[-1]
    assert combined.lat_mean_ns == 104_000_000
    assert combined.lat_sd_ns == 5_700_000
    assert combined.lat_p99_ns == 165_100_000
    assert combined.ster == 0.0


def test_table_fixture_errors(tmp_path):
    with pytest.raises(BundleError, match="cannot read"):
        load_table_fixture(tmp_path / "missing.json")
    bad = tmp_path / "f.json"
    bad.write_text("{")
    with pytest.raises(BundleError, match="not valid JSON"):
        load_table_fixture(bad)
    bad.write_text(json.dumps({"format": "x"}))
    with pytest.raises(BundleError, match="not recognized"):
        load_table_fixture(bad)
    bad.write_text(json.dumps({"format": "infersentry-table-fixture/1", "rows": []}))
    with pytest.raises(BundleError, match="no rows"):
        load_table_fixture(bad)


def test_latency_fixture_reproduces_published_aggregates():
    records = load_latency_fixture(bundled_fixture_path("latencies_combined"))
    assert len(records) == 500
    assert [r.activation_index for r in records] == list(range(500))
    summary = summarize_condition(
        records, one_vector_profile(), Thresholds(0.05, 0.0, 100_000_000)
    )
    assert summary.lat_mean_ns == 104_000_000
    assert summary.lat_p99_ns == 165_100_000
    assert summary.ster == 0.0
    cdf = build_cdf(records)
    assert cdf.points[-1] == (165_100_000, 1.0)


def test_latency_fixture_errors(tmp_path):
    bad = tmp_path / "lat.json"
    bad.write_text(json.dumps({"format": "infersentry-latency-fixture/1"}))
    with pytest.raises(BundleError, match="malformed"):
        load_latency_fixture(bad)


# -- replay document ----------------------------------------------------------------


def test_summary_doc_from_table_feeds_the_verify_flow(tmp_path):
    thresholds, rows = load_table_fixture(bundled_fixture_path("table_contention_ladder"))
    doc = summary_doc_from_table(thresholds, rows)
    path = tmp_path / "summary.json"
    path.write_text(json.dumps(doc))
    loaded_thresholds, entries = load_summary(path)
    assert loaded_thresholds == thresholds
    assert len(entries) == 6
    assert entries[0]["verdict"]["overall_pass"] is True
    assert entries[5]["verdict"]["overall_pass"] is False
    assert entries[5]["verdict"]["budget_breach_fraction"] == 0.651
