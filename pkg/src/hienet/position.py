"""Stack-style tree position encodings.

A position is k blocks of width n. Descending to child i pushes the one-hot
block e_i at the front and drops the last block; ascending pops the front
block and zero-fills at the back. The root is the zero vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tree import ROOT, CodeTree


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class TreePosition:
    vec: np.ndarray
    n: int
    k: int

    @classmethod
    def root(cls, n: int, k: int) -> "TreePosition":
        return cls(np.zeros(n * k), n, k)

    def blocks(self) -> np.ndarray:
        return self.vec.reshape(self.k, self.n)

    @property
    def depth(self) -> int:
        return int(np.count_nonzero(self.blocks().any(axis=1)))

    def is_valid(self) -> bool:
        """Every block is zero or one-hot, and zero blocks only trail."""
        b = self.blocks()
        nz = b.any(axis=1)
        if not np.all((b == 0) | (b == 1)) or np.any(b.sum(axis=1) > 1):
            return False
        d = int(nz.sum())
        return bool(nz[:d].all())


def down(p: TreePosition, i: int) -> TreePosition:
    if not 0 <= i < p.n:
        raise CapacityError(f"child index {i} outside branching capacity n={p.n}")
    if p.vec[-p.n:].any():
        raise CapacityError(f"depth overflow: position already at depth capacity k={p.k} (n={p.n})")
    head = np.zeros(p.n)
    head[i] = 1.0
    return TreePosition(np.concatenate([head, p.vec[:-p.n]]), p.n, p.k)


def up(p: TreePosition) -> TreePosition:
    if not p.vec.any():
        raise CapacityError("cannot move up from the root position")
    return TreePosition(np.concatenate([p.vec[p.n:], np.zeros(p.n)]), p.n, p.k)


def encode_path(t: CodeTree, code: str, n: Optional[int] = None, k: Optional[int] = None) -> TreePosition:
    n = max(1, t.max_branching) if n is None else n
    k = max(1, t.max_depth) if k is None else k
    if n < t.max_branching or k < t.max_depth:
        raise CapacityError(
            f"capacity n={n}, k={k} below tree branching {t.max_branching} / depth {t.max_depth}")
    p = TreePosition.root(n, k)
    if code == ROOT:
        t.node(code)
        return p
    for c in t.path(code):
        p = down(p, t.nodes[c].child_index)
    return p


@dataclass
class PosProjection:
    """Linear map from raw positions (n*k) to the model width d_e."""

    matrix: np.ndarray
    trainable: bool = False

    @classmethod
    def orthonormal(cls, d_e: int, d_pos: int, seed: int = 0, trainable: bool = False) -> "PosProjection":
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((max(d_e, d_pos), min(d_e, d_pos)))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))
        m = q.T if d_e <= d_pos else q       # orthonormal rows when d_e <= d_pos
        return cls(np.ascontiguousarray(m), trainable)

    @classmethod
    def identity(cls, d: int) -> "PosProjection":
        return cls(np.eye(d))


def raw_positions(t: CodeTree, codes: Sequence[str], n: Optional[int] = None,
                  k: Optional[int] = None) -> np.ndarray:
    """Raw position vectors as columns, (n*k) x len(codes)."""
    if not codes:
        n = max(1, t.max_branching) if n is None else n
        k = max(1, t.max_depth) if k is None else k
        return np.zeros((n * k, 0))
    return np.stack([encode_path(t, c, n, k).vec for c in codes], axis=1)


def project_all(t: CodeTree, proj: PosProjection, codes: Optional[Sequence[str]] = None,
                n: Optional[int] = None, k: Optional[int] = None) -> np.ndarray:
    """Projected tree-position embeddings Vp as a d_e x len(codes) matrix."""
    codes = t.codes if codes is None else list(codes)
    raw = raw_positions(t, codes, n, k)
    if proj.matrix.shape[1] != raw.shape[0]:
        raise ValueError(
            f"projection expects width {proj.matrix.shape[1]}, positions have width {raw.shape[0]}")
    return proj.matrix @ raw
