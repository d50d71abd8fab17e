"""Training loop, evaluation, ablations and lambda sweeps."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import autodiff as ad
from .config import HieNetConfig
from .graph import build_graph
from .metrics import EvalResult, evaluate_scores
from .model import HieNet
from .optim import AdamState, adam_step
from .synth import LabeledDoc
from .tree import CodeTree

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass
class TrainResult:
    model: HieNet
    log: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = -1.0
    epochs_run: int = 0
    stopped_early: bool = False


def check_dataset(docs: Sequence[LabeledDoc], tree: CodeTree, vocab_size: int) -> None:
    for d in docs:
        for code in d.gold:
            if code not in tree.nodes or code == "<root>":
                raise DatasetError(f"document {d.doc_id}: label {code!r} not in the code tree")
        if d.tokens and (min(d.tokens) < 0 or max(d.tokens) >= vocab_size):
            raise DatasetError(f"document {d.doc_id}: token id outside vocabulary of {vocab_size}")


def label_sets(docs: Sequence[LabeledDoc], tree: CodeTree) -> List[List[int]]:
    idx = tree.index()
    return [[idx[c] for c in d.gold] for d in docs]


def build_model(cfg: HieNetConfig, tree: CodeTree, vocab_size: int,
                train_docs: Sequence[LabeledDoc]) -> HieNet:
    graph = build_graph(label_sets(train_docs, tree), len(tree.codes), cfg.graph_weighted)
    return HieNet(cfg, tree, vocab_size, graph)


def evaluate(model: HieNet, docs: Sequence[LabeledDoc]) -> EvalResult:
    probs = model.predict(list(docs))
    return evaluate_scores(probs, model.gold_matrix(docs), model.cfg.p_at_n, model.cfg.threshold)


def train(cfg: HieNetConfig, train_docs: Sequence[LabeledDoc], val_docs: Sequence[LabeledDoc],
          tree: CodeTree, vocab_size: int, log_path=None) -> TrainResult:
    """Staged training: hierarchy pre-phase, then BCE with early stopping on val micro-F1.

    The parameters of the best validation epoch are restored at the end.
    """
    check_dataset(train_docs, tree, vocab_size)
    check_dataset(val_docs, tree, vocab_size)
    train_docs, val_docs = list(train_docs), list(val_docs)
    model = build_model(cfg, tree, vocab_size, train_docs)
    bpr = model.fit_hierarchy()
    if bpr is not None:
        log.info("hierarchy pre-phase: %d evaluations, loss %.5f, converged=%s",
                 len(bpr.losses), bpr.final_loss, bpr.converged)

    rng = np.random.default_rng(cfg.seed + 1)
    state = AdamState()
    gold_all = model.gold_matrix(train_docs)
    res = TrainResult(model)
    best = None
    since_best = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_docs))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            ids = order[s:s + cfg.batch_size]
            tokens, mask = model.batch([train_docs[i] for i in ids])
            ad.zero_grad(model.params.values())
            loss = model.loss(tokens, mask, gold_all[ids], train=True, rng=rng)
            ad.backward(loss)
            adam_step(model.params, {k: v.grad for k, v in model.params.items()}, state, lr=cfg.lr)
            losses.append(float(loss.data))
        val = evaluate(model, val_docs) if val_docs else None
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else 0.0}
        if val is not None:
            row.update({f"val_{k}": v for k, v in val.row().items()})
        res.log.append(row)
        res.epochs_run = epoch
        monitor = val.micro_f1 if val is not None else -row["train_loss"]
        log.info("epoch %d loss %.4f monitor %.4f", epoch, row["train_loss"], monitor)
        if monitor > res.best_val:
            res.best_val, res.best_epoch = monitor, epoch
            best = {k: v.copy() for k, v in model.arrays().items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                res.stopped_early = True
                break
    if best is not None:
        model.load_arrays(best)
    if log_path is not None:
        write_rows(log_path, res.log)
    return res


def write_rows(path, rows: Sequence[Dict]) -> None:
    if not rows:
        open(path, "w").close()
        return
    cols = list(rows[0].keys())
    for r in rows[1:]:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def ablate(cfg: HieNetConfig, train_docs, val_docs, test_docs, tree: CodeTree, vocab_size: int,
           modes: Sequence[str] = ("full", "no_pm", "no_bhpe", "no_pp")) -> Dict[str, EvalResult]:
    """Train and test each ablation mode with shared seed and data."""
    out = {}
    for mode in modes:
        res = train(cfg.replace(mode=mode), train_docs, val_docs, tree, vocab_size)
        out[mode] = evaluate(res.model, test_docs)
    return out


def ablation_rows(results: Dict[str, EvalResult]) -> List[Dict]:
    return [{"mode": m, **r.row()} for m, r in results.items()]


def lambda_sweep(model: HieNet, docs: Sequence[LabeledDoc],
                 values: Sequence[float] = tuple(round(0.1 * i, 1) for i in range(11))
                 ) -> List[Dict]:
    """Evaluate a frozen model at each blend factor (PM runs at inference only)."""
    saved = model.cfg
    rows = []
    try:
        for lam in values:
            model.cfg = saved.replace(pm_lambda=float(lam))
            rows.append({"lambda": float(lam), **evaluate(model, docs).row()})
    finally:
        model.cfg = saved
    return rows


def toy_grad_check(seed: int = 0, eps: float = 1e-6) -> Dict[str, float]:
    """Central-difference check of the full loss on a tiny double-precision model.

    Every branch is on (hierarchy encoder trained jointly, PageRank,
    progressive blending at lambda 0.3), L = 6 codes, N = 16 tokens, d_e = 8.
    """
    from .head import bce_loss
    from .tree import build_tree

    tree = build_tree([("A", "alpha"), ("A.1", "alpha one"), ("A.2", "alpha two"),
                       ("B", "beta"), ("B.1", "beta one"), ("B.2", "beta two")])
    rng = np.random.default_rng(seed)
    codes = tree.codes
    docs = []
    for i in range(4):
        gold = tuple(sorted(rng.choice(codes, 2, replace=False).tolist()))
        docs.append(LabeledDoc(f"g{i}", rng.integers(1, 20, 16).tolist(), gold))
    cfg = HieNetConfig(seed=seed, d_e=8, filter_sizes=(1, 3), d_c=4, max_len=16, dtype="float64",
                       dropout=0.0, joint_bpr=True, pm_lambda=0.3, bpr_max_epochs=5)
    model = build_model(cfg, tree, 20, docs)
    model.fit_hierarchy()
    model.params["score_bias"].data[:] = 1.0      # keep confirmations happening
    tokens, mask = model.batch(docs)
    gold = model.gold_matrix(docs)
    out = model.forward(tokens, mask)
    blends = sum(len(s.affected) for t in out.traces for s in t.steps)

    def f():
        o = model.forward(tokens, mask, train=False)
        return ad.add(bce_loss(o.probs, gold), model.joint_bpr_loss())
    err = ad.grad_check(f, list(model.params.values()), eps=eps)
    return {"max_rel_err": float(err), "n_params": int(sum(p.data.size for p in model.params.values())),
            "pm_blends": int(blends), "L": model.L, "N": int(tokens.shape[1]), "d_e": cfg.d_e}
