"""Vanilla-versus-fusion comparison over two run records.

Latency and resource statistics are computed over the steady-state window,
which opens at twice the relative timestamp of the last completed merge in
the candidate record (whole run when nothing merged), excluding the
transition phase from both sides of the comparison.
"""

from __future__ import annotations

import csv
import json
import statistics
from pathlib import Path

from .records import RunRecord


def steady_window_start(record: RunRecord) -> float:
    merges = record.completed_merges()
    if not merges:
        return 0.0
    return 2.0 * max(m.rel_ms for m in merges)


def percentile(values: list[float], fraction: float) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    position = fraction * (len(ordered) - 1)
    lower = int(position)
    upper = min(lower + 1, len(ordered) - 1)
    weight = position - lower
    return ordered[lower] * (1 - weight) + ordered[upper] * weight


def summarize(record: RunRecord, window_start: float) -> dict:
    lat_all = record.latencies()
    lat_window = record.latencies(since_rel_ms=window_start)
    window_stats = [s for s in record.stat_samples if s.rel_ms >= window_start]
    counts = [s.instance_count for s in window_stats]
    rss = [s.rss_sum_bytes for s in window_stats]
    return {
        "mode": record.mode,
        "requests": len(record.request_samples),
        "failed_requests": len(record.failed_requests()),
        "median_ms": statistics.median(lat_all) if lat_all else 0.0,
        "median_steady_ms": statistics.median(lat_window) if lat_window else 0.0,
        "p95_steady_ms": percentile(lat_window, 0.95),
        "steady_instance_count": statistics.mode(counts) if counts else 0,
        "steady_rss_sum_bytes": statistics.fmean(rss) if rss else 0.0,
        "merge_events": [
            {"rel_ms": m.rel_ms, "outcome": m.outcome, "functions": list(m.functions)}
            for m in record.merge_markers
        ],
    }


def _reduction_pct(baseline: float, candidate: float) -> float:
    if baseline <= 0:
        return 0.0
    return (baseline - candidate) / baseline * 100.0


def build_report(vanilla: RunRecord, fused: RunRecord) -> dict:
    """Comparison document; refuses records from mismatched workloads."""
    if not vanilla.valid or not fused.valid:
        raise ValueError("cannot compare: at least one record is flagged invalid")
    if vanilla.params() != fused.params():
        raise ValueError(
            f"mismatched workload parameters: {vanilla.params()} vs {fused.params()}"
        )
    window_start = steady_window_start(fused)
    base = summarize(vanilla, window_start)
    cand = summarize(fused, window_start)
    return {
        "app": vanilla.app,
        "requests": vanilla.requests,
        "rate": vanilla.rate,
        "hop_delay_ms": vanilla.hop_delay_ms,
        "compute_delay_ms": vanilla.compute_delay_ms,
        "steady_window_start_ms": window_start,
        "vanilla": base,
        "fusion": cand,
        "median_latency_reduction_ms": base["median_steady_ms"] - cand["median_steady_ms"],
        "median_latency_reduction_pct": _reduction_pct(
            base["median_steady_ms"], cand["median_steady_ms"]
        ),
        "instance_count_before": base["steady_instance_count"],
        "instance_count_after": cand["steady_instance_count"],
        "instance_count_reduction_pct": _reduction_pct(
            base["steady_instance_count"], cand["steady_instance_count"]
        ),
        "rss_sum_reduction_pct": _reduction_pct(
            base["steady_rss_sum_bytes"], cand["steady_rss_sum_bytes"]
        ),
    }


def write_report(doc: dict, vanilla: RunRecord, fused: RunRecord, out: Path) -> list[Path]:
    """Write the JSON document plus plottable CSV companions."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8")
    stem = out.with_suffix("")

    latency_csv = Path(f"{stem}.latency.csv")
    with latency_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "timestamp_ms", "latency_ms"])
        for record in (vanilla, fused):
            for sample in record.request_samples:
                writer.writerow([record.mode, f"{sample.send_rel_ms:.1f}", f"{sample.latency_ms:.2f}"])

    resources_csv = Path(f"{stem}.resources.csv")
    with resources_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "timestamp_ms", "instance_count", "rss_sum_bytes"])
        for record in (vanilla, fused):
            for sample in record.stat_samples:
                writer.writerow(
                    [record.mode, f"{sample.rel_ms:.1f}", sample.instance_count, sample.rss_sum_bytes]
                )

    merges_csv = Path(f"{stem}.merges.csv")
    with merges_csv.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "timestamp_ms", "outcome", "functions"])
        for record in (vanilla, fused):
            for marker in record.merge_markers:
                writer.writerow(
                    [record.mode, f"{marker.rel_ms:.1f}", marker.outcome, " ".join(marker.functions)]
                )
    return [out, latency_csv, resources_csv, merges_csv]
