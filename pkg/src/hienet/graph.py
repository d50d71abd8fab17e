"""Label co-occurrence graph and personalized PageRank propagation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, List, NamedTuple, Sequence, Set

import numpy as np


@dataclass(frozen=True)
class PprConfig:
    d: float = 0.5          # teleport probability
    max_iters: int = 50
    tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.d < 1.0:
            raise ValueError(f"teleport probability d must lie in (0, 1), got {self.d}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


class CoocGraph:
    """Symmetric co-occurrence graph with self-loop-normalized adjacency."""

    def __init__(self, A: np.ndarray):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency must be square, got {A.shape}")
        if not np.allclose(A, A.T) or np.any(A < 0) or np.any(np.diag(A) != 0):
            raise ValueError("adjacency must be symmetric, nonnegative, with zero diagonal")
        self.A = A
        self.L = A.shape[0]
        self.A_tilde = A + np.eye(self.L)
        self.deg = self.A_tilde.sum(axis=1)
        self.D_tilde = np.diag(self.deg)
        s = 1.0 / np.sqrt(self.deg)
        self.A_hat = s[:, None] * self.A_tilde * s[None, :]

    def edges(self) -> Set[tuple]:
        i, j = np.nonzero(np.triu(self.A, 1))
        return {(int(a), int(b)) for a, b in zip(i, j)}

    def propagation_matrix(self, cfg: PprConfig) -> np.ndarray:
        """The L x L linear map d (I - (1-d) A_hat)^-1."""
        return ppr_closed_form(self, cfg, np.eye(self.L))


def build_graph(label_sets: Iterable[Iterable[int]], L: int, weighted: bool = False) -> CoocGraph:
    """Connect every co-occurring pair of labels (one clique per label set).

    Weights are 1 for any pair that ever co-occurs, or raw counts when
    ``weighted``; duplicates inside one set are ignored.
    """
    A = np.zeros((L, L))
    for labels in label_sets:
        labels = sorted(set(labels))
        if labels and (labels[0] < 0 or labels[-1] >= L):
            raise IndexError(f"label index outside [0, {L})")
        for a, b in combinations(labels, 2):
            A[a, b] += 1.0
            A[b, a] += 1.0
    if not weighted:
        A = (A > 0).astype(np.float64)
    return CoocGraph(A)


def ppr_closed_form(g: CoocGraph, cfg: PprConfig, X: np.ndarray) -> np.ndarray:
    """d (I - (1-d) A_hat)^-1 X by a linear solve.

    Isolated nodes decouple from the system and are their own fixed point,
    so their rows are copied through exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    Z = X.copy()
    live = np.flatnonzero(g.A.sum(axis=1) > 0)
    if live.size:
        M = np.eye(live.size) - (1.0 - cfg.d) * g.A_hat[np.ix_(live, live)]
        Z[live] = cfg.d * np.linalg.solve(M, X[live])
    return Z


class PprResult(NamedTuple):
    Z: np.ndarray
    converged: bool
    iterations: int
    residual: float


def ppr_iterate(g: CoocGraph, cfg: PprConfig, X: np.ndarray) -> PprResult:
    """Fixed-point iteration Z <- (1-d) A_hat Z + d X starting from Z = X."""
    X = np.asarray(X, dtype=np.float64)
    Z = X
    iso = g.A.sum(axis=1) == 0
    residual = np.inf
    for it in range(1, cfg.max_iters + 1):
        Z_next = (1.0 - cfg.d) * (g.A_hat @ Z) + cfg.d * X
        Z_next[iso] = X[iso]
        residual = float(np.max(np.abs(Z_next - Z))) if Z.size else 0.0
        Z = Z_next
        if residual <= cfg.tol:
            return PprResult(Z, True, it, residual)
    return PprResult(Z, False, cfg.max_iters, residual)


def neighbors(g: CoocGraph, c: int) -> Set[int]:
    return {int(j) for j in np.nonzero(g.A[c] > 0)[0]}


def neighbor_intersection(g: CoocGraph, cs: Sequence[int]) -> Set[int]:
    if not cs:
        return set()
    out = neighbors(g, cs[0])
    for c in cs[1:]:
        out &= neighbors(g, c)
    return out


def neighbor_sets(g: CoocGraph) -> List[Set[int]]:
    return [neighbors(g, c) for c in range(g.L)]


# ------------------------------------------------------------------------ io

def save_edges(g: CoocGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "weight"])
        for i, j in sorted(g.edges()):
            w.writerow([i, j, repr(float(g.A[i, j]))])


def load_edges(path, L: int = None) -> CoocGraph:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["i"]), int(rec["j"]), float(rec["weight"])))
    if L is None:
        L = 1 + max((max(i, j) for i, j, _ in rows), default=-1)
    A = np.zeros((L, L))
    for i, j, w in rows:
        A[i, j] = A[j, i] = w
    return CoocGraph(A)
