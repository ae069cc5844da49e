"""Per-checkpoint metrics records and a JSON-lines sink."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np


def percentiles(latencies_ms, qs=(50, 95, 99)) -> tuple[float, ...]:
    """Nearest-rank percentiles; zeros for an empty sample."""
    a = np.sort(np.asarray(latencies_ms, dtype=np.float64))
    if a.size == 0:
        return tuple(0.0 for _ in qs)
    out = []
    for q in qs:
        rank = int(np.ceil(q / 100.0 * a.size))
        out.append(float(a[min(max(rank, 1), a.size) - 1]))
    return tuple(out)


@dataclass
class MetricsRecord:
    step: int
    recall: float
    search_throughput: float = 0.0
    insert_throughput: float = 0.0
    miss_rate: float = 0.0
    p50: float = 0.0
    p95: float = 0.0
    p99: float = 0.0
    modeled_cost: float = 0.0
    k: int = 10
    live: int = 0
    kind: str = "checkpoint"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate {self.miss_rate} outside [0, 1]")
        if not 0.0 <= self.recall <= 1.0:
            raise ValueError(f"recall {self.recall} outside [0, 1]")
        if not self.p50 <= self.p95 <= self.p99:
            raise ValueError("latency percentiles must be nondecreasing")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class JsonlSink:
    """Append records to a file (or keep them in memory when path is None)."""

    def __init__(self, path: str | None = None):
        self.records: list[MetricsRecord] = []
        self._f = open(path, "w") if path else None

    def emit(self, rec: MetricsRecord):
        self.records.append(rec)
        if self._f:
            self._f.write(rec.to_json() + "\n")
            self._f.flush()

    def close(self):
        if self._f:
            self._f.close()
            self._f = None


def read_jsonl(path: str) -> list[MetricsRecord]:
    with open(path) as f:
        return [MetricsRecord(**json.loads(line)) for line in f if line.strip()]
