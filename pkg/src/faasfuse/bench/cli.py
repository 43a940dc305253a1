"""Benchmark command line: run workloads and compare their records."""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from ..config import default_runtime_cmd
from .records import RunRecord
from .report import build_report, write_report
from .runner import BenchSettings, run_benchmark


def cmd_run(args) -> int:
    runtime_cmd = shlex.split(args.runtime_cmd) if args.runtime_cmd else default_runtime_cmd()
    settings = BenchSettings(
        app=args.app,
        mode=args.mode,
        requests=args.requests,
        rate=args.rate,
        hop_delay_ms=args.hop_delay,
        compute_delay_ms=args.compute_delay,
        fusion_source=args.fusion_source,
        fusion_delay_s=args.fusion_delay,
        runtime_cmd=runtime_cmd,
    )
    record = run_benchmark(settings, out=Path(args.out))
    failed = len(record.failed_requests())
    merges = len(record.completed_merges())
    print(
        f"{args.app}/{args.mode}: {len(record.request_samples)} requests, "
        f"{failed} failed, {merges} merges, record -> {args.out}"
    )
    return 0 if record.valid and failed == 0 else 1


def cmd_report(args) -> int:
    baseline = RunRecord.load(Path(args.baseline))
    candidate = RunRecord.load(Path(args.candidate))
    doc = build_report(baseline, candidate)
    paths = write_report(doc, baseline, candidate, Path(args.out))
    print(json.dumps(doc, indent=2, sort_keys=True))
    print("wrote: " + ", ".join(str(p) for p in paths), file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one benchmark and persist its record")
    run.add_argument("--app", choices=["tree", "iot"], required=True)
    run.add_argument("--mode", choices=["vanilla", "fusion"], required=True)
    run.add_argument("--requests", type=int, default=1000)
    run.add_argument("--rate", type=float, default=5.0)
    run.add_argument("--hop-delay", type=int, default=50, metavar="MS")
    run.add_argument("--compute-delay", type=int, default=10, metavar="MS")
    run.add_argument("--out", required=True, metavar="FILE")
    run.add_argument("--fusion-source", choices=["scripted", "detected"], default="scripted")
    run.add_argument("--fusion-delay", type=float, default=5.0, metavar="SECONDS")
    run.add_argument("--runtime-cmd", help="override the sandbox runtime command line")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="compare a baseline record against a candidate")
    report.add_argument("--baseline", required=True, metavar="FILE")
    report.add_argument("--candidate", required=True, metavar="FILE")
    report.add_argument("--out", required=True, metavar="FILE")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
