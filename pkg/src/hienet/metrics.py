"""Multi-label evaluation: Jaccard@topK, P@N, macro/micro F1 and AUC.

``probs`` is a (docs x labels) score matrix, ``gold`` a same-shaped 0/1 matrix.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Per-row indices of the k highest scores; ties go to the lower index."""
    order = np.argsort(-scores, axis=1, kind="stable")
    return order[:, :k]


def jaccard_topk(probs: np.ndarray, gold: np.ndarray, k: int) -> Tuple[float, int]:
    """Mean Jaccard of top-k predictions against gold sets.

    Documents without gold labels are skipped; returns (mean, skipped count).
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    probs, gold = np.atleast_2d(probs), np.atleast_2d(gold).astype(bool)
    top = topk_indices(probs, min(k, probs.shape[1]))
    pred = np.zeros_like(gold)
    np.put_along_axis(pred, top, True, axis=1)
    keep = gold.any(axis=1)
    inter = (pred & gold).sum(axis=1)
    union = (pred | gold).sum(axis=1)
    skipped = int((~keep).sum())
    if not keep.any():
        return 0.0, skipped
    return float(np.mean(inter[keep] / union[keep])), skipped


def p_at_n(probs: np.ndarray, gold: np.ndarray, n: int) -> float:
    if n < 1:
        raise ValueError("N must be >= 1")
    probs, gold = np.atleast_2d(probs), np.atleast_2d(gold).astype(bool)
    top = topk_indices(probs, min(n, probs.shape[1]))
    hits = np.take_along_axis(gold, top, axis=1).sum(axis=1)
    return float(np.mean(hits / n))


def f1_scores(probs: np.ndarray, gold: np.ndarray, threshold: float = 0.5) -> Tuple[float, float]:
    """(macro, micro) F1 after binarizing at ``threshold``.

    Macro averages over labels with at least one gold positive.
    """
    pred = np.atleast_2d(probs) >= threshold
    gold = np.atleast_2d(gold).astype(bool)
    tp = (pred & gold).sum(axis=0).astype(float)
    fp = (pred & ~gold).sum(axis=0).astype(float)
    fn = (~pred & gold).sum(axis=0).astype(float)
    denom = 2 * tp + fp + fn
    per_label = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    present = gold.any(axis=0)
    macro = float(per_label[present].mean()) if present.any() else 0.0
    d = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = float(2 * tp.sum() / d) if d > 0 else 0.0
    return macro, micro


def _auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """ROC-AUC via the rank-sum statistic with midranks for ties."""
    pos = labels.sum()
    neg = labels.size - pos
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - pos * (pos + 1) / 2) / (pos * neg))


def auc_scores(probs: np.ndarray, gold: np.ndarray) -> Tuple[float, float]:
    """(macro, micro) ROC-AUC.

    Labels with a single class are left out of the macro mean but still
    enter the pooled micro computation.
    """
    probs = np.atleast_2d(probs)
    gold = np.atleast_2d(gold).astype(bool)
    per = []
    for j in range(gold.shape[1]):
        col = gold[:, j]
        if 0 < col.sum() < col.size:
            per.append(_auc(probs[:, j], col))
    macro = float(np.mean(per)) if per else float("nan")
    flat = gold.ravel()
    micro = _auc(probs.ravel(), flat) if 0 < flat.sum() < flat.size else float("nan")
    return macro, micro


@dataclass
class EvalResult:
    jaccard_top20: float
    jaccard_top30: float
    p_at_n: Dict[int, float]
    macro_f1: float
    micro_f1: float
    macro_auc: float
    micro_auc: float
    skipped: int = 0

    def row(self) -> Dict[str, float]:
        """Flat record in the column layout used by the CSV reports."""
        out = {
            "jaccard_top20": self.jaccard_top20,
            "jaccard_top30": self.jaccard_top30,
            "macro_auc": self.macro_auc,
            "micro_auc": self.micro_auc,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
        }
        for n, v in sorted(self.p_at_n.items()):
            out[f"p_at_{n}"] = v
        return out

    def to_dict(self) -> dict:
        return asdict(self)


METRIC_COLUMNS = ["jaccard_top20", "jaccard_top30", "macro_auc", "micro_auc", "macro_f1", "micro_f1"]


def evaluate_scores(probs: np.ndarray, gold: np.ndarray, p_ns: Sequence[int] = (5, 8, 15),
                    threshold: float = 0.5) -> EvalResult:
    j20, skipped = jaccard_topk(probs, gold, 20)
    j30, _ = jaccard_topk(probs, gold, 30)
    macro_f1, micro_f1 = f1_scores(probs, gold, threshold)
    macro_auc, micro_auc = auc_scores(probs, gold)
    return EvalResult(
        jaccard_top20=j20,
        jaccard_top30=j30,
        p_at_n={n: p_at_n(probs, gold, n) for n in p_ns},
        macro_f1=macro_f1,
        micro_f1=micro_f1,
        macro_auc=macro_auc,
        micro_auc=micro_auc,
        skipped=skipped,
    )
