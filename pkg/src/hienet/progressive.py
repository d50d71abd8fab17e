"""Progressive prediction: confirmed codes pull their neighbours' features toward theirs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Set, Tuple

import numpy as np

NEIGHBOR_SOURCES = ("graph", "tree", "union")


@dataclass(frozen=True)
class PmConfig:
    lam: float = 0.3
    rounds: int = 3
    tau: float = 0.5
    neighbor_source: str = "graph"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.neighbor_source not in NEIGHBOR_SOURCES:
            raise ValueError(f"neighbor_source must be one of {NEIGHBOR_SOURCES}")


@dataclass
class TraceStep:
    round: int
    code: int
    was_correct: Optional[bool]
    affected: List[int]


@dataclass
class PmTrace:
    steps: List[TraceStep] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    @property
    def confirmed(self) -> List[int]:
        return [s.code for s in self.steps]

    def to_json(self, labels: Optional[Sequence[str]] = None) -> str:
        rows = []
        for s in self.steps:
            d = asdict(s)
            if labels is not None:
                d["code"] = labels[s.code]
                d["affected"] = [labels[j] for j in s.affected]
            rows.append(d)
        return json.dumps(rows)


def combine_neighbors(graph_nbrs: Sequence[Set[int]], tree_nbrs: Sequence[Set[int]],
                      source: str) -> List[Set[int]]:
    if source == "graph":
        return [set(s) for s in graph_nbrs]
    if source == "tree":
        return [set(s) for s in tree_nbrs]
    return [set(a) | set(b) for a, b in zip(graph_nbrs, tree_nbrs)]


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x)) if x >= 0 else np.exp(x) / (1.0 + np.exp(x))


def apply(Araw: np.ndarray, scorer: Callable[[np.ndarray], np.ndarray],
          nbrs: Sequence[Set[int]], gold: Optional[np.ndarray], cfg: PmConfig
          ) -> Tuple[np.ndarray, PmTrace, np.ndarray]:
    """Run progressive confirmation on one document.

    Each round scores all codes from the current features, confirms the
    best unconfirmed one (lowest index on ties) if its probability reaches
    ``tau``, and blends f_j <- lam f_c + (1 - lam) f_j into every unconfirmed
    neighbour j. With ``gold`` given, a wrong confirmation ends the process.

    Returns (P, trace, M) where P = M @ Araw row-wise.
    """
    L = Araw.shape[0]
    P = np.array(Araw, copy=True)
    M = np.eye(L, dtype=Araw.dtype)
    trace = PmTrace()
    done = np.zeros(L, dtype=bool)
    lam = cfg.lam
    for r in range(cfg.rounds):
        if done.all():
            break
        logits = np.asarray(scorer(P), dtype=np.float64)
        cand = np.where(done, -np.inf, logits)
        c = int(np.argmax(cand))
        if _sigmoid(cand[c]) < cfg.tau:
            break
        done[c] = True
        correct = None if gold is None else bool(gold[c])
        if correct is False:
            trace.steps.append(TraceStep(r, c, False, []))
            break
        affected = sorted(j for j in nbrs[c] if not done[j] and j != c)
        for j in affected:
            P[j] = lam * P[c] + (1.0 - lam) * P[j]
            M[j] = lam * M[c] + (1.0 - lam) * M[j]
        trace.steps.append(TraceStep(r, c, correct, affected))
    return P, trace, M


def apply_logits(logits: np.ndarray, nbrs: Sequence[Set[int]], gold: Optional[np.ndarray],
                 cfg: PmConfig) -> Tuple[np.ndarray, PmTrace]:
    """Scalar variant: blend logits instead of feature rows."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1, 1)
    out, trace, _ = apply(z, lambda P: P[:, 0], nbrs, gold, cfg)
    return out[:, 0], trace
