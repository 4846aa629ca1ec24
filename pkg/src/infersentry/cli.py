"""Command-line entry points.

Exit codes: 0 all gates passed (or the command completed), 1 a gate failed,
2 usage or input errors, 3 runtime failures (backend or stressor trouble,
filesystem errors).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from . import __version__
from .metrics import Thresholds, compute_ster
from .protocol import (
    BundleError,
    bundled_plan_path,
    capture_baseline,
    load_meta,
    load_plan,
    load_profile,
    load_records,
    load_summary,
    run_protocol,
    save_profile,
    summary_from_dict,
)
from .reporting import (
    build_cdf,
    build_scatter,
    cdf_csv,
    render_summary_table,
    render_verdicts,
    scatter_csv,
)
from .stressors import StressorError, StressorSpec, start_stressor

EXIT_PASS = 0
EXIT_GATE_FAIL = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(ValueError):
    pass


def _resolve_plan(arg: str) -> Path:
    if arg.startswith("builtin:"):
        return bundled_plan_path(arg[len("builtin:"):])
    return Path(arg)


def cmd_calibrate(args: argparse.Namespace) -> int:
    plan = load_plan(_resolve_plan(args.plan))
    profile = capture_baseline(plan)
    save_profile(profile, args.out)
    print(
        f"captured reference profile: {len(profile.vectors)} inputs x "
        f"{profile.k_passes} passes -> {args.out}"
    )
    return EXIT_PASS


def cmd_run(args: argparse.Namespace) -> int:
    plan = load_plan(_resolve_plan(args.plan))
    profile = load_profile(args.profile) if args.profile else None
    result = run_protocol(plan, args.out, profile=profile, echo=print)
    print(f"bundle written to {result.out_dir}")
    print(f"gate: {'PASS' if result.gate_pass else 'FAIL'} (run 'infersentry verify' to gate)")
    return EXIT_PASS


def cmd_verify(args: argparse.Namespace) -> int:
    results = Path(args.results)
    stored_thresholds, entries = load_summary(results / "summary.json")
    budget_ns = round(args.tn_ms * 1e6)
    thresholds = Thresholds(t_star=args.tstar, ster_max=args.ster_max, budget_ns=budget_ns)
    summaries = []
    aborted = []
    for entry in entries:
        cid = str(entry.get("condition_id", "?"))
        if entry.get("aborted") or not entry.get("metrics"):
            aborted.append((cid, str(entry.get("abort_reason") or "no completed trials")))
            continue
        summary = summary_from_dict(entry["metrics"])
        if thresholds.t_star != stored_thresholds.t_star:
            # The stored exceedance rate was counted at a different threshold;
            # recount from the raw deltas instead of trusting it.
            csv_path = results / f"records-{cid}.csv"
            if not csv_path.exists():
                raise BundleError(
                    f"--tstar {args.tstar} differs from the stored "
                    f"{stored_thresholds.t_star} and {csv_path.name} is missing, "
                    f"so the exceedance rate cannot be recomputed"
                )
            records = load_records(csv_path)
            if len(records) != summary.n_activations:
                raise BundleError(
                    f"{csv_path.name} holds {len(records)} records but the summary "
                    f"says {summary.n_activations}"
                )
            ster, exceed = compute_ster([r.delta for r in records], thresholds.t_star)
            summary = dataclasses.replace(summary, ster=ster, exceed_count=exceed)
        summaries.append(summary)
    text, status = render_verdicts(summaries, thresholds, aborted=aborted)
    print(text, end="")
    return EXIT_PASS if status == 0 else EXIT_GATE_FAIL


def _emit(doc: str, out: str | None) -> None:
    if out:
        Path(out).write_text(doc)
        print(f"wrote {out}")
    else:
        sys.stdout.write(doc)


def cmd_report(args: argparse.Namespace) -> int:
    results = Path(args.results)
    _, entries = load_summary(results / "summary.json")
    summaries = [summary_from_dict(e["metrics"]) for e in entries if e.get("metrics")]
    fmt = args.format
    if fmt in ("text", "csv", "json"):
        _emit(render_summary_table(summaries, fmt), args.out)
        return EXIT_PASS
    if fmt == "cdf":
        if not args.out:
            raise UsageError("--format cdf writes one file per condition; pass --out DIR")
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        written = 0
        for entry in entries:
            if not entry.get("metrics"):
                continue
            cid = entry["condition_id"]
            csv_path = results / f"records-{cid}.csv"
            if not csv_path.exists():
                raise BundleError(f"cdf needs raw records, {csv_path.name} is missing")
            series = build_cdf(load_records(csv_path))
            (outdir / f"cdf-{cid}.csv").write_text(cdf_csv(series))
            written += 1
        print(f"wrote {written} cdf series to {outdir}")
        return EXIT_PASS
    if fmt == "scatter":
        label = "backend"
        meta_path = results / "meta.json"
        if meta_path.exists():
            meta = load_meta(meta_path)
            label = str(meta.get("plan", {}).get("backend", {}).get("kind", label))
        points = build_scatter([(label, summaries)])
        _emit(scatter_csv(points), args.out)
        return EXIT_PASS
    raise UsageError(f"unknown report format {fmt!r}")


def _parse_cpu_arg(raw: str) -> tuple[float, int]:
    """PCT or PCT:WORKERS; workers=0 means one per online core."""
    parts = raw.split(":")
    if len(parts) > 2:
        raise UsageError(f"--cpu takes PCT or PCT:WORKERS, got {raw!r}")
    try:
        pct = float(parts[0])
        workers = int(parts[1]) if len(parts) == 2 else 0
    except ValueError:
        raise UsageError(f"--cpu takes PCT or PCT:WORKERS, got {raw!r}") from None
    return pct, workers


def cmd_stress(args: argparse.Namespace) -> int:
    try:
        specs = []
        if args.cpu is not None:
            pct, workers = _parse_cpu_arg(args.cpu)
            specs.append(StressorSpec(kind="cpu", utilization_pct=pct, workers=workers))
        if args.memory_mb is not None:
            specs.append(
                StressorSpec(
                    kind="memory",
                    megabytes=args.memory_mb,
                    override_cap=args.override_memory_cap,
                )
            )
        if args.disk_mbps is not None:
            specs.append(StressorSpec(kind="disk", rate_mbps=args.disk_mbps))
        if args.net_pps is not None:
            specs.append(
                StressorSpec(
                    kind="network",
                    datagrams_per_s=args.net_pps,
                    payload_bytes=args.payload_bytes,
                )
            )
    except StressorError as exc:
        # bad parameters are an input problem, not a runtime one
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not specs:
        print("error: no stressors requested", file=sys.stderr)
        return EXIT_USAGE
    if args.duration_s <= 0:
        print("error: --duration-s must be positive", file=sys.stderr)
        return EXIT_USAGE
    handles = []
    try:
        for spec in specs:
            handles.append(start_stressor(spec))
        time.sleep(args.duration_s)
        for h in handles:
            flag = "  [FAILED]" if h.failed else ""
            print(
                f"{h.kind}: requested {h.requested:g} {h.unit}, "
                f"achieved {h.achieved():.1f} {h.unit}{flag}"
            )
    finally:
        for h in reversed(handles):
            h.stop()
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infersentry",
        description=(
            "Verify inference backends under resource contention: output "
            "stability against a zero-load reference and tail latency against "
            "a cycle budget, jointly."
        ),
    )
    parser.add_argument("--version", action="version", version=f"infersentry {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_cal = sub.add_parser(
        "calibrate", help="capture a zero-load reference profile for a plan"
    )
    p_cal.add_argument("--plan", required=True, help="plan file, or builtin:<name>")
    p_cal.add_argument("--out", required=True, help="profile output path")
    p_cal.set_defaults(func=cmd_calibrate)

    p_run = sub.add_parser("run", help="execute a plan and write a results bundle")
    p_run.add_argument("--plan", required=True, help="plan file, or builtin:<name>")
    p_run.add_argument("--out", required=True, help="bundle output directory")
    p_run.add_argument("--profile", help="reuse an existing reference profile")
    p_run.set_defaults(func=cmd_run)

    p_ver = sub.add_parser("verify", help="apply the joint gates to a results bundle")
    p_ver.add_argument("--results", required=True, help="bundle directory")
    p_ver.add_argument("--tn-ms", type=float, default=100.0, help="latency budget in ms")
    p_ver.add_argument("--ster-max", type=float, default=0.0, help="exceedance-rate ceiling")
    p_ver.add_argument("--tstar", type=float, default=0.05, help="deviation threshold")
    p_ver.set_defaults(func=cmd_verify)

    p_rep = sub.add_parser("report", help="render a bundle as tables, cdfs, or scatter data")
    p_rep.add_argument("--results", required=True, help="bundle directory")
    p_rep.add_argument(
        "--format",
        required=True,
        choices=("text", "csv", "json", "cdf", "scatter"),
    )
    p_rep.add_argument("--out", help="output file (directory for --format cdf); stdout otherwise")
    p_rep.set_defaults(func=cmd_report)

    p_str = sub.add_parser("stress", help="run stressors standalone and report achieved load")
    p_str.add_argument("--cpu", help="duty-cycle percent, or PCT:WORKERS")
    p_str.add_argument("--memory-mb", type=int, help="committed, continuously touched MB")
    p_str.add_argument(
        "--override-memory-cap",
        action="store_true",
        help="allow more than half of total RAM",
    )
    p_str.add_argument("--disk-mbps", type=float, help="paced flushed writes, MB/s")
    p_str.add_argument("--net-pps", type=float, help="loopback UDP datagrams per second")
    p_str.add_argument("--payload-bytes", type=int, default=1024, help="UDP payload size")
    p_str.add_argument("--duration-s", type=float, default=10.0, help="how long to hold the load")
    p_str.set_defaults(func=cmd_stress)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ValueError as exc:
        # plan, bundle, threshold and flag problems: the input is wrong
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        # backend or stressor failures at runtime
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
