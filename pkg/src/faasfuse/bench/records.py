"""Benchmark run records and their line-delimited persistence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class RequestSample:
    index: int
    send_rel_ms: float
    latency_ms: float
    status: int  # 0 = transport failure
    body_sha256: str


@dataclass(frozen=True)
class StatSample:
    rel_ms: float
    instance_count: int
    rss_sum_bytes: int


@dataclass(frozen=True)
class MergeMarker:
    rel_ms: float
    outcome: str
    new_instance: str | None
    functions: tuple[str, ...]


@dataclass
class RunRecord:
    app: str
    mode: str  # vanilla | fusion
    requests: int
    rate: float
    hop_delay_ms: int
    compute_delay_ms: int
    started_at_ms: int
    valid: bool = True
    request_samples: list[RequestSample] = field(default_factory=list)
    stat_samples: list[StatSample] = field(default_factory=list)
    merge_markers: list[MergeMarker] = field(default_factory=list)

    def params(self) -> tuple:
        return (self.app, self.requests, self.rate, self.hop_delay_ms, self.compute_delay_ms)

    def failed_requests(self) -> list[RequestSample]:
        return [s for s in self.request_samples if s.status != 200]

    def latencies(self, since_rel_ms: float = 0.0) -> list[float]:
        return [
            s.latency_ms
            for s in self.request_samples
            if s.status == 200 and s.send_rel_ms >= since_rel_ms
        ]

    def completed_merges(self) -> list[MergeMarker]:
        return [m for m in self.merge_markers if m.outcome == "completed"]

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            meta = {
                "kind": "meta",
                "app": self.app,
                "mode": self.mode,
                "requests": self.requests,
                "rate": self.rate,
                "hop_delay_ms": self.hop_delay_ms,
                "compute_delay_ms": self.compute_delay_ms,
                "started_at_ms": self.started_at_ms,
                "valid": self.valid,
            }
            fh.write(json.dumps(meta, separators=(",", ":")) + "\n")
            for req in self.request_samples:
                fh.write(json.dumps({"kind": "request", **asdict(req)}, separators=(",", ":")) + "\n")
            for sample in self.stat_samples:
                fh.write(json.dumps({"kind": "sample", **asdict(sample)}, separators=(",", ":")) + "\n")
            for marker in self.merge_markers:
                doc = asdict(marker)
                doc["functions"] = list(marker.functions)
                fh.write(json.dumps({"kind": "merge", **doc}, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: Path) -> "RunRecord":
        record: RunRecord | None = None
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                kind = doc.pop("kind")
                if kind == "meta":
                    record = cls(**doc)
                elif record is None:
                    raise ValueError(f"{path}: record body precedes meta line")
                elif kind == "request":
                    record.request_samples.append(RequestSample(**doc))
                elif kind == "sample":
                    record.stat_samples.append(StatSample(**doc))
                elif kind == "merge":
                    doc["functions"] = tuple(doc["functions"])
                    record.merge_markers.append(MergeMarker(**doc))
        if record is None:
            raise ValueError(f"{path}: empty run record")
        return record
