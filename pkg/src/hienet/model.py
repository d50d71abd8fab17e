"""HieNet: the assembled hierarchical multi-label coding model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import head
from . import hierarchy as hier
from . import progressive as pm
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import HieNetConfig, as_dict, from_mapping
from .graph import CoocGraph, PprConfig, neighbor_sets, ppr_closed_form, ppr_iterate
from .position import PosProjection, raw_positions
from .tree import ROOT, CodeTree, tree_adjacency


@dataclass
class ForwardOut:
    logits: Tensor
    probs: Tensor
    Araw: Tensor
    P: Tensor
    PPR: Tensor
    attention: Tensor
    traces: List[pm.PmTrace] = field(default_factory=list)
    bpr: Optional[Tensor] = None


class HieNet:
    def __init__(self, cfg: HieNetConfig, tree: CodeTree, vocab_size: int, graph: CoocGraph):
        self.cfg = cfg
        self.tree = tree
        self.labels = tree.codes
        self.L = len(self.labels)
        self.vocab_size = vocab_size
        if graph.L != self.L:
            raise ValueError(f"graph has {graph.L} nodes, tree has {self.L} codes")
        self.graph = graph
        self.dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(cfg.seed)

        ecfg = self.encoder_config
        self.params: Dict[str, Tensor] = {}
        self.params.update(enc.init_encoder_params(ecfg, vocab_size, rng, self.dtype, cfg.emb_scale))
        self.params.update(head.init_head_params(ecfg.width, cfg.d_e, self.L, rng, self.dtype))

        self.bpr_params: Dict[str, Tensor] = {}
        self.bpr_params.update(hier.init_block("up", cfg.d_e, rng, self.dtype))
        self.bpr_params.update(hier.init_block("down", cfg.d_e, rng, self.dtype))

        self.desc_vocab = hier.description_vocab(tree)
        self.desc_table = (rng.standard_normal((max(1, len(self.desc_vocab)), cfg.d_e))
                           * cfg.desc_scale).astype(self.dtype)
        self.inits = hier.code_inits(tree, self.desc_table, self.desc_vocab)

        self.n = cfg.pos_n or max(1, tree.max_branching)
        self.k = cfg.pos_k or max(1, tree.max_depth)
        self.raw_pos = raw_positions(tree, [ROOT] + self.labels, self.n, self.k).astype(self.dtype)
        proj = PosProjection.orthonormal(cfg.d_e, self.n * self.k, seed=cfg.seed)
        self.proj = Tensor(proj.matrix.astype(self.dtype), requires_grad=cfg.train_projection)
        if cfg.train_projection and cfg.joint_bpr:
            self.params["proj"] = self.proj

        if cfg.joint_bpr and cfg.mode != "no_bhpe":
            self.params.update(self.bpr_params)

        self.Vt = np.zeros((cfg.d_e, self.L), dtype=self.dtype)
        self.bpr_result: Optional[hier.BprResult] = None
        self.ppr_cfg = PprConfig(cfg.ppr_d, cfg.ppr_max_iters, cfg.ppr_tol)
        self.propagation = self._propagation()
        self.nbrs = pm.combine_neighbors(neighbor_sets(graph), tree_adjacency(tree), cfg.pm_neighbors)

    # ------------------------------------------------------------- structure

    @property
    def encoder_config(self) -> enc.EncoderConfig:
        c = self.cfg
        return enc.EncoderConfig(c.d_e, c.filter_sizes, c.d_c, c.max_len)

    @property
    def pm_config(self) -> pm.PmConfig:
        c = self.cfg
        return pm.PmConfig(c.pm_lambda, c.pm_rounds, c.pm_tau, c.pm_neighbors)

    def _propagation(self) -> np.ndarray:
        eye = np.eye(self.L)
        if self.cfg.ppr_mode == "iterate":
            op = ppr_iterate(self.graph, self.ppr_cfg, eye).Z
        else:
            op = ppr_closed_form(self.graph, self.ppr_cfg, eye)
        return op.astype(self.dtype)

    def positions(self) -> Tensor:
        """Projected positions Vp, rows [ROOT] + codes (L+1 x d_e)."""
        return ad.transpose(ad.matmul(self.proj, ad.const(self.raw_pos)))

    def fit_hierarchy(self) -> Optional[hier.BprResult]:
        """Staged pre-phase: align the up/down encoders and freeze Vt."""
        if self.cfg.mode == "no_bhpe":
            return None
        bcfg = hier.BprConfig(self.cfg.bpr_threshold, self.cfg.bpr_max_epochs, self.cfg.bpr_lr)
        self.bpr_result = hier.train_bpr(self.tree, self.inits, self.positions().data,
                                         self.bpr_params, bcfg)
        self.Vt = self.bpr_result.Vt.astype(self.dtype)
        return self.bpr_result

    def code_repr(self) -> Tensor:
        """Vpt (d_e x L): Vt + Vp, or plain description means without the hierarchy encoder."""
        if self.cfg.mode == "no_bhpe":
            return ad.const(np.ascontiguousarray(self.inits[1:].T))
        Vp = ad.slice_(ad.matmul(self.proj, ad.const(self.raw_pos)), np.s_[:, 1:])
        if self.cfg.joint_bpr:
            _, _, Vt_rows = hier.code_reprs(self.tree, ad.const(self.inits),
                                            self.positions(), self.bpr_params)
            return ad.add(ad.transpose(Vt_rows), Vp)
        return ad.add(ad.const(self.Vt), Vp)

    def joint_bpr_loss(self) -> Tensor:
        u, dn, _ = hier.code_reprs(self.tree, ad.const(self.inits), self.positions(), self.bpr_params)
        return hier.bpr_loss(u, dn)

    # --------------------------------------------------------------- forward

    def pm_active(self, train: bool) -> bool:
        c = self.cfg
        return (c.mode != "no_pm" and c.pm_rounds > 0 and c.pm_lambda > 0.0
                and (not train or c.pm_train))

    def forward(self, tokens: np.ndarray, mask: np.ndarray, train: bool = False,
                rng: Optional[np.random.Generator] = None, gold: Optional[np.ndarray] = None
                ) -> ForwardOut:
        c = self.cfg
        X = enc.embed(tokens, self.params["E"])
        X = ad.dropout(X, c.dropout, rng, train)
        H = enc.forward(X, self.encoder_config, self.params).H
        H = ad.dropout(H, c.dropout, rng, train)
        Araw, S = head.code_wise_attention(H, self.code_repr(), self.params, mask)
        PPR = Araw if c.mode == "no_pp" else head.ppr_branch(Araw, self.propagation)

        P, traces = Araw, []
        if self.pm_active(train) and c.pm_blend == "features":
            mixes = []
            cfg = self.pm_config
            for b in range(Araw.shape[0]):
                ppr_b = PPR.data[b]
                scorer = lambda F, ppr_b=ppr_b: head.logits_numpy(F, ppr_b, self.params)
                g = gold[b] if (train and gold is not None) else None
                _, tr, M = pm.apply(Araw.data[b], scorer, self.nbrs, g, cfg)
                mixes.append(M)
                traces.append(tr)
            if any(len(t.steps) for t in traces):
                P = ad.matmul(ad.const(np.stack(mixes).astype(self.dtype)), Araw)

        logits, probs = head.aggregate(P, PPR, self.params)
        if self.pm_active(train) and c.pm_blend == "logits" and not train:
            blended = []
            for b in range(logits.shape[0]):
                z, tr = pm.apply_logits(logits.data[b], self.nbrs, None, self.pm_config)
                blended.append(z)
                traces.append(tr)
            logits = ad.const(np.stack(blended).astype(self.dtype))
            probs = ad.sigmoid(logits)
        return ForwardOut(logits, probs, Araw, P, PPR, S, traces)

    def loss(self, tokens, mask, gold: np.ndarray, train: bool = True,
             rng: Optional[np.random.Generator] = None) -> Tensor:
        out = self.forward(tokens, mask, train, rng, gold)
        total = head.bce_loss(out.probs, gold)
        if self.cfg.joint_bpr and self.cfg.mode != "no_bhpe":
            total = ad.add(total, ad.scale(self.joint_bpr_loss(), self.cfg.bpr_weight))
        return total

    # ------------------------------------------------------------ batch api

    def gold_matrix(self, docs) -> np.ndarray:
        idx = self.tree.index()
        G = np.zeros((len(docs), self.L), dtype=self.dtype)
        for i, d in enumerate(docs):
            for code in d.gold:
                G[i, idx[code]] = 1.0
        return G

    def batch(self, docs):
        return enc.pad_batch([d.tokens for d in docs], self.cfg.max_len, max(self.cfg.filter_sizes))

    def predict(self, docs, batch_size: int = 64, keep_traces: bool = False):
        """Probabilities (docs x L); with ``keep_traces`` also the PM traces."""
        probs, traces = [], []
        for s in range(0, len(docs), batch_size):
            chunk = docs[s:s + batch_size]
            tokens, mask = self.batch(chunk)
            out = self.forward(tokens, mask, train=False)
            probs.append(out.probs.data)
            traces.extend(out.traces)
        P = np.concatenate(probs) if probs else np.zeros((0, self.L), self.dtype)
        return (P, traces) if keep_traces else P

    # ----------------------------------------------------------- persistence

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.params.items()}
        out.update({f"bpr.{name}": t.data for name, t in self.bpr_params.items()})
        out["fixed.Vt"] = self.Vt
        out["fixed.proj"] = self.proj.data
        out["fixed.desc_table"] = self.desc_table
        out["fixed.graph_A"] = self.graph.A
        return out

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            t.data = arrays[name].astype(self.dtype).copy()
        for name, t in self.bpr_params.items():
            t.data = arrays[f"bpr.{name}"].astype(self.dtype).copy()
        self.Vt = arrays["fixed.Vt"].astype(self.dtype).copy()
        self.proj.data = arrays["fixed.proj"].astype(self.dtype).copy()
        self.desc_table = arrays["fixed.desc_table"].astype(self.dtype).copy()
        self.inits = hier.code_inits(self.tree, self.desc_table, self.desc_vocab)

    def save(self, path, extra_meta: Optional[dict] = None) -> None:
        meta = {"config": {k: list(v) if isinstance(v, tuple) else v
                           for k, v in as_dict(self.cfg).items()},
                "labels": self.labels, "vocab_size": self.vocab_size}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.arrays(), meta)

    @classmethod
    def load(cls, path, tree: CodeTree, overrides: Optional[Dict[str, str]] = None) -> "HieNet":
        import json
        with open(path, encoding="utf-8") as fh:
            meta = json.load(fh)["meta"]
        values = {k: ",".join(map(str, v)) if isinstance(v, list) else str(v)
                  for k, v in meta["config"].items()}
        values.update(overrides or {})
        cfg = from_mapping(HieNetConfig, values)
        if meta["labels"] != tree.codes:
            raise ValueError("checkpoint label set does not match the code tree")
        arrays, _ = load_checkpoint(path)
        model = cls(cfg, tree, int(meta["vocab_size"]), CoocGraph(arrays["fixed.graph_A"]))
        expected = {k: v.shape for k, v in model.arrays().items()}
        arrays, _ = load_checkpoint(path, expected)
        model.load_arrays(arrays)
        return model
