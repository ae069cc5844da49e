"""Index and run configuration, loadable from a flat ``key=value`` file."""
from dataclasses import dataclass, fields

# file key -> attribute
_KEYS = {
    "graph.R": "R",
    "graph.partition_size": "partition_size",
    "graph.L_build": "L_build",
    "search.L": "L_search",
    "search.k": "k",
    "seed": "seed",
    "cache.policy": "policy",
    "cache.alpha": "alpha",
    "cache.beta": "beta",
    "cache.t_hot": "t_hot",
    "cache.t_cold": "t_cold",
    "cache.t_transfer": "t_transfer",
    "cache.theta_adaptive": "theta_adaptive",
    "cache.capacity_fraction": "capacity_fraction",
    "cache.hot_capacity": "hot_capacity",
    "cache.window_len": "window_len",
    "cache.decay": "decay",
    "cache.lrfu_lambda": "lrfu_lambda",
    "cache.warm_up": "warm_up",
    "update.L_insert": "L_insert",
    "update.repair_threshold": "repair_threshold",
    "update.repair_fanout": "repair_fanout",
    "update.repair_budget": "repair_budget",
    "update.consolidation_threshold": "consolidation_threshold",
    "update.version_bound": "version_bound",
    "update.sync_batch": "sync_batch",
    "update.sync": "sync",
    "update.repair": "repair",
    "update.consolidate": "consolidate",
    "store.spill_path": "spill_path",
    "run.batch_size": "batch_size",
    "run.workers": "workers",
    "run.target_qps": "target_qps",
}


@dataclass
class IndexConfig:
    R: int = 32
    partition_size: int = 131072
    L_build: int = 64
    L_search: int = 128
    k: int = 10
    seed: int = 0
    policy: str = "wavp"
    alpha: float = 0.6
    beta: float = 0.4
    t_hot: float = 1.0
    t_cold: float = 5.0
    t_transfer: float = 40.0
    theta_adaptive: bool = False
    capacity_fraction: float = 0.2
    hot_capacity: int | None = None  # absolute slot count; overrides the fraction
    window_len: int = 4096
    decay: float = 0.5
    lrfu_lambda: float = 0.1
    warm_up: bool = True
    L_insert: int = 128
    repair_threshold: float = 0.5
    repair_fanout: int = 8
    repair_budget: int = 1024
    consolidation_threshold: float = 0.2
    version_bound: int = 2
    sync_batch: int = 256
    sync: bool = True
    repair: bool = True
    consolidate: bool = True
    spill_path: str | None = None
    batch_size: int = 256
    workers: int = 1
    target_qps: float = 0.0

    def hot_slots(self, n_vectors: int) -> int:
        if self.hot_capacity is not None:
            return int(self.hot_capacity)
        return int(round(self.capacity_fraction * n_vectors))

    def replace(self, **kw) -> "IndexConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(kw)
        return IndexConfig(**data)


def _coerce(value: str, current):
    if isinstance(current, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if value.strip().lower() in ("", "none"):
        return None
    return value.strip()


def parse_config(text: str, base: IndexConfig | None = None) -> IndexConfig:
    cfg = base or IndexConfig()
    updates = {}
    types = {f.name: f.type for f in fields(IndexConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        attr = _KEYS.get(key)
        if attr is None:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        current = getattr(cfg, attr)
        optional = "None" in str(types[attr])
        if optional and value.lower() in ("", "none"):
            updates[attr] = None
        elif current is None and "int" in str(types[attr]):
            updates[attr] = int(value)
        else:
            updates[attr] = _coerce(value, current)
    return cfg.replace(**updates)


def load_config(path: str, base: IndexConfig | None = None) -> IndexConfig:
    with open(path) as f:
        return parse_config(f.read(), base)


def dump_config(cfg: IndexConfig) -> str:
    lines = []
    for key, attr in _KEYS.items():
        value = getattr(cfg, attr)
        lines.append(f"{key}={'none' if value is None else value}")
    return "\n".join(lines) + "\n"
