"""Run configuration and plain-text key=value config files."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Any, Dict, Tuple, Type, TypeVar

T = TypeVar("T")

MODES = ("full", "no_pm", "no_bhpe", "no_pp")


@dataclass
class HieNetConfig:
    seed: int = 7
    # document encoder
    d_e: int = 100
    filter_sizes: Tuple[int, ...] = (1, 3, 5, 7, 10)
    d_c: int = 128
    max_len: int = 128
    emb_scale: float = 1.0
    dropout: float = 0.2
    # optimisation
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 10
    dtype: str = "float32"
    # hierarchy encoder
    bpr_threshold: float = 0.01
    bpr_max_epochs: int = 200
    bpr_lr: float = 1e-3
    joint_bpr: bool = False
    bpr_weight: float = 1.0
    pos_n: int = 0              # 0: take branching capacity from the tree
    pos_k: int = 0              # 0: take depth capacity from the tree
    train_projection: bool = False
    desc_scale: float = 1.0
    # label graph / PageRank
    ppr_d: float = 0.5
    ppr_max_iters: int = 50
    ppr_tol: float = 1e-10
    ppr_mode: str = "closed"    # closed | iterate
    graph_weighted: bool = False
    # progressive mechanism
    pm_lambda: float = 0.3
    pm_rounds: int = 3
    pm_tau: float = 0.5
    pm_neighbors: str = "graph"
    pm_train: bool = False
    pm_blend: str = "features"  # features | logits
    # ablation / evaluation
    mode: str = "full"
    threshold: float = 0.5
    p_at_n: Tuple[int, ...] = (5, 8, 15)

    def __post_init__(self):
        self.filter_sizes = tuple(int(k) for k in self.filter_sizes)
        self.p_at_n = tuple(int(k) for k in self.p_at_n)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.ppr_mode not in ("closed", "iterate"):
            raise ValueError("ppr_mode must be 'closed' or 'iterate'")
        if self.pm_blend not in ("features", "logits"):
            raise ValueError("pm_blend must be 'features' or 'logits'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def replace(self, **kw) -> "HieNetConfig":
        return dataclasses.replace(self, **kw)


def _parse(value: str, typ: Any, default: Any):
    value = value.strip()
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def from_mapping(cls: Type[T], values: Dict[str, str], base: T = None) -> T:
    base = base if base is not None else cls()
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for key, raw in values.items():
        key = key.strip().replace("-", "_")
        if key not in known:
            raise ValueError(f"unknown config key {key!r} for {cls.__name__}")
        kw[key] = _parse(raw, known[key].type, getattr(base, key))
    return dataclasses.replace(base, **kw)


def read_kv(path) -> Dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            out[key.strip()] = value.strip()
    return out


def load_config(cls: Type[T], path=None, overrides: Dict[str, str] = None) -> T:
    values = read_kv(path) if path else {}
    values.update(overrides or {})
    return from_mapping(cls, values)


def dump_kv(obj) -> str:
    lines = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def as_dict(obj) -> Dict[str, Any]:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}
