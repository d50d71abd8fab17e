"""Bidirectional hierarchy encoder over the code tree.

The up-stream encoder jointly encodes each internal node's children as an
unordered set; the down-stream encoder maps (parent position + own init) to
a node representation. A symmetric KL loss aligns the two views.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import AdamState, adam_step
from .tree import ROOT, CodeTree

BLOCK_WEIGHTS = ("Wq", "Wk", "Wv", "Ws", "W1", "W2")


def description_vocab(t: CodeTree) -> Dict[str, int]:
    words = sorted({w for n in t.nodes.values() for w in n.description})
    return {w: i for i, w in enumerate(words)}


def code_inits(t: CodeTree, table: np.ndarray, vocab: Dict[str, int]) -> np.ndarray:
    """Mean description-word embedding per node; rows are [ROOT] + t.codes."""
    out = np.zeros((len(t.codes) + 1, table.shape[1]), dtype=table.dtype)
    for r, c in enumerate([ROOT] + t.codes):
        ids = [vocab[w] for w in t.nodes[c].description if w in vocab]
        if ids:
            out[r] = table[ids].mean(axis=0)
    return out


def init_block(prefix: str, d: int, rng: np.random.Generator, dtype=np.float64) -> Dict[str, Tensor]:
    p = {}
    for name in BLOCK_WEIGHTS:
        w = rng.standard_normal((d, d)) / np.sqrt(d)
        if name == "Ws":
            w = np.eye(d) + 0.1 * w
        else:
            w = 0.1 * w
        p[f"{prefix}.{name}"] = Tensor(w.astype(dtype), True)
    p[f"{prefix}.b1"] = Tensor(np.zeros(d, dtype), True)
    p[f"{prefix}.b2"] = Tensor(np.zeros(d, dtype), True)
    return p


def encode_set(X: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    """One attention + feed-forward block over an unordered set of rows.

    No positional terms are used, so the block is permutation-equivariant.
    """
    g = lambda n: params[f"{prefix}.{n}"]
    Q = ad.matmul(X, g("Wq"))
    K = ad.matmul(X, g("Wk"))
    V = ad.matmul(X, g("Wv"))
    att = ad.softmax(ad.scale(ad.matmul(Q, ad.transpose(K)), 1.0 / np.sqrt(X.shape[-1])), axis=-1)
    Hh = ad.add(ad.matmul(att, V), ad.matmul(X, g("Ws")))
    ff = ad.matmul(ad.relu(ad.add(ad.matmul(Hh, g("W1")), g("b1"))), g("W2"))
    return ad.add(ad.add(Hh, ff), g("b2"))


def encode_singletons(X: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    """encode_set applied to each row as its own 1-element set (attention weight 1)."""
    g = lambda n: params[f"{prefix}.{n}"]
    Hh = ad.add(ad.matmul(X, g("Wv")), ad.matmul(X, g("Ws")))
    ff = ad.matmul(ad.relu(ad.add(ad.matmul(Hh, g("W1")), g("b1"))), g("W2"))
    return ad.add(ad.add(Hh, ff), g("b2"))


def _groups(t: CodeTree) -> List[Tuple[int, List[int]]]:
    """(parent row, child rows) for every internal node; rows index [ROOT] + codes."""
    row = {c: i for i, c in enumerate([ROOT] + t.codes)}
    return [(row[c], [row[k] for k in n.children])
            for c, n in sorted(t.nodes.items(), key=lambda kv: row[kv[0]]) if n.children]


def up_pass(t: CodeTree, inits: Tensor, positions: Tensor, params: Dict[str, Tensor]) -> Tensor:
    """Contextual child representations i_up, rows [ROOT] + codes.

    Each child row comes from encoding its sibling set; the root row is the
    mean of its children's rows (zero when the tree is empty).
    """
    X = ad.add(positions, inits)
    n_rows = X.shape[0]
    parts, order = [], []
    root_rows = None
    for prow, crows in _groups(t):
        out = encode_set(ad.take_rows(X, np.array(crows)), params, "up")
        parts.append(out)
        order.extend(crows)
        if prow == 0:
            root_rows = out
    d = X.shape[1]
    root = ad.mean(root_rows, axis=0) if root_rows is not None else ad.const(np.zeros(d, X.data.dtype))
    stacked = ad.concat([ad.reshape(root, (1, d))] + parts, axis=0)
    # stacked row 0 is the root, then children in `order`; permute back to row ids
    where = np.empty(n_rows, dtype=np.int64)
    where[0] = 0
    where[np.array(order, dtype=np.int64)] = np.arange(1, n_rows)
    return ad.take_rows(stacked, where)


def down_pass(t: CodeTree, inits: Tensor, positions: Tensor, params: Dict[str, Tensor],
              up: Optional[Tensor] = None) -> Tensor:
    """i_down = encoder(parent position + own init); the root copies its i_up row."""
    codes = [ROOT] + t.codes
    row = {c: i for i, c in enumerate(codes)}
    parent_rows = np.array([row[t.nodes[c].parent] for c in codes[1:]], dtype=np.int64)
    if len(codes) == 1:
        body = None
    else:
        Xin = ad.add(ad.take_rows(positions, parent_rows), ad.slice_(inits, np.s_[1:]))
        body = encode_singletons(Xin, params, "down")
    if up is None:
        up = up_pass(t, inits, positions, params)
    root = ad.slice_(up, np.s_[0:1])
    return root if body is None else ad.concat([root, body], axis=0)


def _row_log_softmax_parts(X: Tensor) -> Tuple[Tensor, Tensor]:
    p = ad.softmax(X, axis=-1)
    return p, ad.log(ad.add(p, ad.const(np.full(p.shape, 1e-8, p.data.dtype))))


def bpr_loss(up: Tensor, down: Tensor) -> Tensor:
    """L1 + L2 + (L1 - L2)^2 with L1 = mean KL(up||down), L2 = mean KL(down||up).

    Rows are turned into distributions by softmax; logs use a 1e-8 floor.
    """
    if up.shape != down.shape:
        raise ad.ShapeError(f"bpr_loss: incompatible shapes {up.shape} and {down.shape}")
    if not (np.all(np.isfinite(up.data)) and np.all(np.isfinite(down.data))):
        raise FloatingPointError("bpr_loss: non-finite input")
    pu, lu = _row_log_softmax_parts(up)
    pd, ld = _row_log_softmax_parts(down)
    diff = ad.add(lu, ad.scale(ld, -1.0))
    l1 = ad.mean(ad.sum_(ad.mul(pu, diff), axis=-1))
    l2 = ad.mean(ad.sum_(ad.mul(pd, ad.scale(diff, -1.0)), axis=-1))
    gap = ad.add(l1, ad.scale(l2, -1.0))
    return ad.add(ad.add(l1, l2), ad.mul(gap, gap))


def combine(Vt: np.ndarray, Vp: np.ndarray) -> np.ndarray:
    Vt, Vp = np.asarray(Vt), np.asarray(Vp)
    if Vt.shape != Vp.shape:
        raise ad.ShapeError(f"combine: incompatible shapes {Vt.shape} and {Vp.shape}")
    return Vt + Vp


@dataclass
class BprConfig:
    threshold: float = 0.01
    max_epochs: int = 200
    lr: float = 1e-3


@dataclass
class BprResult:
    Vt: np.ndarray            # d_e x L
    losses: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def code_reprs(t: CodeTree, inits: Tensor, positions: Tensor, params: Dict[str, Tensor]
               ) -> Tuple[Tensor, Tensor, Tensor]:
    """(i_up, i_down, Vt rows) for the non-root codes; Vt = (i_up + i_down) / 2."""
    up = up_pass(t, inits, positions, params)
    down = down_pass(t, inits, positions, params, up)
    u = ad.slice_(up, np.s_[1:])
    dn = ad.slice_(down, np.s_[1:])
    return u, dn, ad.scale(ad.add(u, dn), 0.5)


def train_bpr(t: CodeTree, inits: np.ndarray, positions: np.ndarray, params: Dict[str, Tensor],
              cfg: BprConfig = BprConfig()) -> BprResult:
    """Alternate Adam steps on the up and down encoders until the loss drops below threshold.

    ``inits`` and ``positions`` are (L+1) x d_e arrays with the root in row 0.
    """
    X0, P0 = ad.const(inits), ad.const(positions)
    up_names = {k: v for k, v in params.items() if k.startswith("up.")}
    down_names = {k: v for k, v in params.items() if k.startswith("down.")}
    states = (AdamState(), AdamState())
    res = BprResult(Vt=np.zeros((inits.shape[1], len(t.codes))))
    for epoch in range(cfg.max_epochs + 1):
        ad.zero_grad(params.values())
        u, dn, Vt = code_reprs(t, X0, P0, params)
        if len(t.codes) == 0:
            res.converged = True
            break
        loss = bpr_loss(u, dn)
        res.losses.append(float(loss.data))
        res.Vt = Vt.data.T.copy()
        if res.losses[-1] < cfg.threshold:
            res.converged = True
            break
        if epoch == cfg.max_epochs:
            break
        ad.backward(loss)
        group, state = (up_names, states[0]) if epoch % 2 == 0 else (down_names, states[1])
        adam_step(group, {k: v.grad for k, v in group.items()}, state, lr=cfg.lr)
    return res
