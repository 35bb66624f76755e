"""Command-line entry point.

Subcommands: gen-trace, analyze-cdf, analyze-drift, analyze-coverage, plan,
run, baseline, verify. Exit codes: 0 success / digests equal, 1 digest
mismatch, 2 usage error, 3 runtime error. Every subcommand is deterministic:
identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analytics
from .engine import (
    fingerprint_file,
    load_config,
    run_pipeline,
    run_synchronous_baseline,
    verify_equivalence,
)
from .errors import EmbcacheError, IncomparableRunsError
from .lookahead import format_plan, plan_trace
from .report import load_report
from .store import read_store_dump, write_store_dump
from .traces import (
    Schema,
    ZipfSpec,
    batchify,
    generate_synthetic_trace,
    iter_trace,
    read_trace_schema,
    write_trace,
)


def _parse_schema(text: str) -> Schema:
    """Parse TABLES:ROWS:DENSE:DIM where ROWS is one int or a comma list."""
    parts = text.split(":")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("schema must be TABLES:ROWS:DENSE:DIM")
    try:
        num_tables = int(parts[0])
        rows = [int(r) for r in parts[1].split(",")]
        num_dense = int(parts[2])
        emb_dim = int(parts[3])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad schema spec {text!r}") from None
    if len(rows) == 1:
        rows = rows * num_tables
    return Schema(num_tables, tuple(rows), num_dense, emb_dim)


def _parse_segments(text: str, num_examples: int) -> list[int]:
    """Either explicit comma-separated indices or ``equal:K`` segments."""
    if text.startswith("equal:"):
        k = int(text.removeprefix("equal:"))
        if k < 2:
            raise argparse.ArgumentTypeError("equal:K needs K >= 2")
        return [i * num_examples // k for i in range(1, k)]
    return [int(x) for x in text.split(",")]


def _float_csv(x: float) -> str:
    return repr(float(x))


def _cmd_gen_trace(args) -> int:
    spec = ZipfSpec(args.schema, args.zipf, args.examples, args.seed)
    n = write_trace(args.out, args.schema, generate_synthetic_trace(spec))
    print(f"wrote {n} examples to {args.out}")
    return 0


def _cmd_analyze_cdf(args) -> int:
    points = analytics.access_cdf(iter_trace(args.trace))
    lines = ["embedding_fraction,access_fraction"]
    lines.extend(f"{_float_csv(e)},{_float_csv(a)}" for e, a in points)
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(points)} points to {args.out}")
    return 0


def _cmd_analyze_drift(args) -> int:
    examples = list(iter_trace(args.trace))
    boundaries = _parse_segments(args.segments, len(examples))
    coverage = analytics.popularity_drift(examples, boundaries, args.top_fraction)
    lines = []
    if args.segments.startswith("equal:"):
        lines.append("# segmentation=equal-size (no dataset timestamps; day mapping is approximate)")
    lines.append("segment,start_index,end_index,coverage")
    starts = [0] + boundaries
    ends = boundaries + [len(examples)]
    for d, cov in enumerate(coverage):
        lines.append(f"{d},{starts[d]},{ends[d]},{_float_csv(cov)}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(coverage)} segments to {args.out}")
    return 0


def _cmd_analyze_coverage(args) -> int:
    summary = analytics.coverage_vs_batch_size(
        iter_trace(args.trace), args.batch_size, args.top_fraction
    )
    lines = [
        "batch_size,top_fraction,num_batches,min,q1,median,q3,max,mean",
        ",".join(
            [
                str(summary.batch_size),
                _float_csv(summary.top_fraction),
                str(summary.num_batches),
                _float_csv(summary.minimum),
                _float_csv(summary.q1),
                _float_csv(summary.median),
                _float_csv(summary.q3),
                _float_csv(summary.maximum),
                _float_csv(summary.mean),
            ]
        ),
    ]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote coverage summary to {args.out}")
    return 0


def _cmd_plan(args) -> int:
    batches = batchify(iter_trace(args.trace), args.batch_size)
    if args.first_iteration:
        shifted = []
        for b in batches:
            b.iteration += args.first_iteration
            shifted.append(b)
        batches = iter(shifted)
    with open(args.out, "w", encoding="utf-8") as fh:
        count = 0
        for plan in plan_trace(batches, args.lookahead, args.capacity):
            fh.write(format_plan(plan) + "\n")
            count += 1
    print(f"wrote {count} plans to {args.out}")
    return 0


def _run_common(args, runner, kind: str) -> int:
    cfg = load_config(args.config)
    schema = read_trace_schema(args.trace)
    batches = batchify(iter_trace(args.trace), cfg.batch_size)
    report = runner(
        cfg, schema, batches, trace_fingerprint=fingerprint_file(args.trace, cfg.batch_size)
    )
    report_path = Path(args.report)
    report_path.write_bytes(report.to_json_bytes())
    report_path.with_suffix(".csv").write_bytes(report.to_csv_bytes())
    if args.dump_store:
        write_store_dump(report.final_store, str(report_path.with_suffix(".store")))
    print(f"{kind} finished: digest {report.final_store_digest}")
    return 0


def _cmd_run(args) -> int:
    return _run_common(args, run_pipeline, "run")


def _cmd_baseline(args) -> int:
    return _run_common(args, run_synchronous_baseline, "baseline")


def _cmd_verify(args) -> int:
    a = load_report(args.a)
    b = load_report(args.b)
    result = verify_equivalence(a, b)
    if result.equal:
        print(result.describe())
        return 0
    print(result.describe())
    dump_a = Path(args.a).with_suffix(".store")
    dump_b = Path(args.b).with_suffix(".store")
    if dump_a.exists() and dump_b.exists():
        store_a = read_store_dump(str(dump_a))
        store_b = read_store_dump(str(dump_b))
        for key, va, vb in store_a.diff(store_b, limit=100):
            print(f"  {key.table_id}:{key.row_id} {va.tolist()} != {vb.tolist()}")
    return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embcache", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="generate a synthetic Zipf-skewed trace file")
    p.add_argument("--schema", type=_parse_schema, required=True, help="TABLES:ROWS:DENSE:DIM")
    p.add_argument("--zipf", type=float, required=True, help="Zipf exponent (> 0)")
    p.add_argument("--examples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen_trace)

    p = sub.add_parser("analyze-cdf", help="access-skew CDF as CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_analyze_cdf)

    p = sub.add_parser("analyze-drift", help="hot-set coverage per segment as CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--segments", required=True, help="comma-separated indices or equal:K")
    p.add_argument("--top-fraction", type=float, default=0.001)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_analyze_drift)

    p = sub.add_parser("analyze-coverage", help="per-batch hot coverage summary as CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--top-fraction", type=float, default=0.001)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_analyze_coverage)

    p = sub.add_parser("plan", help="emit lookahead plans for a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--lookahead", type=int, required=True)
    p.add_argument("--capacity", type=int, required=True)
    p.add_argument("--first-iteration", type=int, default=0, help="renumber batches from this value")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plan)

    for name, fn, blurb in (
        ("run", _cmd_run, "run the pipelined engine"),
        ("baseline", _cmd_baseline, "run the synchronous baseline oracle"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", required=True, help="engine config JSON")
        p.add_argument("--trace", required=True)
        p.add_argument("--report", required=True, help="output JSON (CSV written alongside)")
        p.add_argument("--dump-store", action="store_true", help="also dump final store values")
        p.set_defaults(fn=fn)

    p = sub.add_parser("verify", help="compare two run reports for digest equality")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(fn=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except IncomparableRunsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except EmbcacheError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
