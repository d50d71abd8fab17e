"""Code-wise attention, PageRank branch, aggregation and the BCE objective."""
from __future__ import annotations

from typing import Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .encoder import glorot

PROB_FLOOR = 1e-7


def init_head_params(d_h: int, d_e: int, L: int, rng: np.random.Generator,
                     dtype=np.float64) -> Dict[str, Tensor]:
    return {
        "W_a": Tensor(glorot(rng, (d_e, d_h), d_h, d_e, dtype), True),
        "b_a": Tensor(np.zeros(d_e, dtype), True),
        "W_fc": Tensor(glorot(rng, (d_e, 2 * d_e), 2 * d_e, d_e, dtype), True),
        "score_vecs": Tensor(glorot(rng, (L, d_e), d_e, 1, dtype), True),
        "score_bias": Tensor(np.zeros(L, dtype), True),
    }


def code_wise_attention(H: Tensor, Vpt: Tensor, params: Dict[str, Tensor],
                        mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """Attend over document positions once per code.

    H: (..., N, d_h); Vpt: (d_e, L). Returns (Araw, S) with Araw (..., L, d_e)
    pooled over the projected map Z = tanh(H W_a^T + b_a) and S (..., L, N)
    the attention weights. ``mask`` (..., N) marks real (non-pad) positions.
    """
    W_a = params["W_a"]
    if H.shape[-1] != W_a.shape[1] or Vpt.shape[0] != W_a.shape[0]:
        raise ShapeError(f"attention: incompatible shapes H {H.shape}, W_a {W_a.shape}, Vpt {Vpt.shape}")
    Z = ad.tanh(ad.add(ad.matmul(H, ad.transpose(W_a)), params["b_a"]))
    scores = ad.transpose(ad.matmul(Z, Vpt))            # (..., L, N)
    m = None if mask is None else np.expand_dims(np.asarray(mask, bool), -2)
    S = ad.softmax(scores, axis=-1, mask=m)
    return ad.matmul(S, Z), S


def ppr_branch(Araw: Tensor, propagation: np.ndarray) -> Tensor:
    """Apply the fixed L x L PageRank operator to each document's code rows."""
    Pi = np.asarray(propagation, dtype=Araw.data.dtype)
    if Pi.shape != (Araw.shape[-2], Araw.shape[-2]):
        raise ShapeError(f"ppr_branch: operator {Pi.shape} does not match {Araw.shape}")
    return ad.matmul(ad.const(Pi), Araw)


def aggregate(P: Tensor, PPR: Tensor, params: Dict[str, Tensor]) -> Tuple[Tensor, Tensor]:
    """Per code: F = W_fc [P; PPR], logit = score_vec . F + bias. Returns (logits, probs)."""
    if P.shape != PPR.shape:
        raise ShapeError(f"aggregate: incompatible shapes {P.shape} and {PPR.shape}")
    F = ad.matmul(ad.concat([P, PPR], axis=-1), ad.transpose(params["W_fc"]))
    logits = ad.add(ad.sum_(ad.mul(F, params["score_vecs"]), axis=-1), params["score_bias"])
    return logits, ad.sigmoid(logits)


def logits_numpy(P: np.ndarray, PPR: np.ndarray, params: Dict[str, Tensor]) -> np.ndarray:
    """Tape-free twin of ``aggregate`` used by the progressive scorer."""
    F = np.concatenate([P, PPR], axis=-1) @ params["W_fc"].data.T
    return (F * params["score_vecs"].data).sum(axis=-1) + params["score_bias"].data


def bce_loss(probs: Tensor, gold: np.ndarray) -> Tensor:
    """Sum over labels of binary cross-entropy, averaged over leading (batch) axes."""
    gold = np.asarray(gold, dtype=probs.data.dtype)
    if gold.shape != probs.shape:
        raise ShapeError(f"bce_loss: incompatible shapes {probs.shape} and {gold.shape}")
    p = ad.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    ones = ad.const(np.ones(p.shape, p.data.dtype))
    pos = ad.mul(ad.log(p), ad.const(gold))
    neg = ad.mul(ad.log(ad.add(ones, ad.scale(p, -1.0))), ad.const(1.0 - gold))
    per_doc = ad.scale(ad.sum_(ad.add(pos, neg), axis=-1), -1.0)
    return ad.mean(per_doc) if per_doc.ndim else per_doc
