"""Synthetic coded-note corpora with planted tree, clique and token structure.

Every code owns a disjoint set of signature tokens. A note samples a gold
label set (optionally seeded by a planted clique of leaf codes, topped up
with extra labels that never form an ancestor/descendant pair), then emits
signature tokens for its labels mixed with noise tokens.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .tree import CodeTree, build_tree

PAD = 0


class ConfigError(ValueError):
    pass


@dataclass
class LabeledDoc:
    doc_id: str
    tokens: List[int]
    gold: Tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps({"doc_id": self.doc_id, "tokens": list(self.tokens),
                           "labels": list(self.gold)})


@dataclass
class GenConfig:
    seed: int = 7
    branching: int = 4
    depth: int = 3
    n_labels: int = 50
    vocab_size: int = 500
    signature_tokens: int = 4
    sig_per_label: int = 2
    signature_dropout: float = 0.0
    n_train: int = 2000
    n_val: int = 400
    n_test: int = 400
    labels_mean: float = 16.0
    labels_cap: int = 22
    n_cliques: int = 5
    clique_size: int = 4
    clique_prob: float = 0.5
    tail_alpha: float = 0.5
    noise_rate: float = 0.2
    desc_vocab: int = 200

    def validate(self) -> None:
        if not 1 <= self.branching <= 10:
            raise ConfigError("branching must be in [1, 10] (one digit per level)")
        if self.depth < 1 or self.n_labels < 1:
            raise ConfigError("depth and n_labels must be positive")
        cap = sum(self.branching ** d for d in range(1, self.depth + 1))
        if self.n_labels > cap:
            raise ConfigError(f"n_labels={self.n_labels} exceeds tree capacity {cap}")
        if self.vocab_size - 1 - self.n_labels * self.signature_tokens < 1:
            raise ConfigError(
                f"vocab_size={self.vocab_size} too small for {self.n_labels} x "
                f"{self.signature_tokens} signature tokens plus noise")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError("noise_rate must be in [0, 1)")
        if not 0.0 <= self.signature_dropout <= 1.0 or not 0.0 <= self.clique_prob <= 1.0:
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.labels_cap < 1 or self.labels_mean <= 0:
            raise ConfigError("labels_mean and labels_cap must be positive")


@dataclass
class Corpus:
    tree: CodeTree
    codes: List[Tuple[str, str]]
    train: List[LabeledDoc]
    val: List[LabeledDoc]
    test: List[LabeledDoc]
    planted: Dict = field(default_factory=dict)
    vocab_size: int = 0


def _balanced_codes(cfg: GenConfig, rng: np.random.Generator) -> List[Tuple[str, str]]:
    words = [f"d{i}" for i in range(cfg.desc_vocab)]
    level = [("", ())]
    out = []
    for d in range(1, cfg.depth + 1):
        nxt = []
        for code, desc in level:
            for j in range(cfg.branching):
                if d == 1:
                    child = f"C{j:02d}"
                elif d == 2:
                    child = f"{code}.{j}"
                else:
                    child = f"{code}{j}"
                own = tuple(rng.choice(words, size=2, replace=False))
                nxt.append((child, desc + own))
        out.extend(nxt)
        level = nxt
    out = out[:cfg.n_labels]
    return [(c, " ".join(desc)) for c, desc in out]


def _conflicts(tree: CodeTree, code: str, chosen: set) -> bool:
    path = set(tree.path(code))
    return any(c in path or code in tree.path(c) for c in chosen)


def generate(cfg: GenConfig) -> Corpus:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    codes = _balanced_codes(cfg, rng)
    tree = build_tree(codes)
    labels = tree.codes
    L = len(labels)
    leaves = [c for c in labels if not tree.nodes[c].children]
    if cfg.n_cliques * cfg.clique_size > len(leaves):
        raise ConfigError(
            f"{cfg.n_cliques} cliques of size {cfg.clique_size} need more than {len(leaves)} leaves")

    s = cfg.signature_tokens
    signatures = {c: list(range(1 + i * s, 1 + (i + 1) * s)) for i, c in enumerate(labels)}
    noise_lo = 1 + L * s
    noise_vocab = cfg.vocab_size - noise_lo

    perm = rng.permutation(leaves)
    cliques = [sorted(perm[i * cfg.clique_size:(i + 1) * cfg.clique_size].tolist())
               for i in range(cfg.n_cliques)]
    weights = (1.0 + rng.permutation(L)) ** (-cfg.tail_alpha)
    weights /= weights.sum()

    def sample_doc(doc_id: str):
        target = int(np.clip(rng.poisson(cfg.labels_mean), 1, cfg.labels_cap))
        chosen: set = set()
        clique = -1
        if cliques and rng.random() < cfg.clique_prob:
            clique = int(rng.integers(len(cliques)))
            chosen.update(cliques[clique])
        for j in rng.choice(L, size=L, replace=False, p=weights):
            if len(chosen) >= target:
                break
            c = labels[j]
            if c not in chosen and not _conflicts(tree, c, chosen):
                chosen.add(c)
        gold = tuple(sorted(chosen))
        toks = []
        for c in gold:
            if rng.random() < cfg.signature_dropout:
                continue
            toks.extend(rng.choice(signatures[c], size=cfg.sig_per_label).tolist())
        n_noise = int(round(len(toks) * cfg.noise_rate / (1.0 - cfg.noise_rate)))
        if not toks:
            n_noise = max(n_noise, 1)
        toks.extend((noise_lo + rng.integers(noise_vocab, size=n_noise)).tolist())
        toks = [int(t) for t in rng.permutation(toks)]
        return LabeledDoc(doc_id, toks, gold), clique

    splits = {}
    doc_cliques = []
    for name, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        docs = []
        for i in range(n):
            doc, clique = sample_doc(f"{name}-{i:05d}")
            docs.append(doc)
            if name == "train":
                doc_cliques.append(clique)
        splits[name] = docs

    idx = tree.index()
    extra = set()
    for doc, clique in zip(splits["train"], doc_cliques):
        inside = set(cliques[clique]) if clique >= 0 else set()
        for a, b in combinations(doc.gold, 2):
            if not (a in inside and b in inside):
                extra.add(tuple(sorted((idx[a], idx[b]))))

    planted = {
        "cliques": cliques,
        "signatures": signatures,
        "train_doc_cliques": doc_cliques,
        "extra_edges": sorted(extra),
        "noise_tokens": [noise_lo, cfg.vocab_size],
    }
    return Corpus(tree, codes, splits["train"], splits["val"], splits["test"], planted, cfg.vocab_size)


def planted_clique_config(seed: int) -> GenConfig:
    """A corpus where co-occurrence cliques carry signal the text partly hides.

    Documents carry many labels, as clinical notes do, so a top-20 list is a
    real ranking task. Half of the gold labels emit no signature tokens and
    are only recoverable through their clique mates.
    """
    return GenConfig(seed=seed, branching=4, depth=3, n_labels=50, vocab_size=600,
                     n_train=800, n_val=200, n_test=300, labels_mean=10.0, labels_cap=16,
                     n_cliques=6, clique_size=5, clique_prob=0.9, tail_alpha=0.5,
                     signature_dropout=0.5, noise_rate=0.3)


# ------------------------------------------------------------------------ io

def write_dataset(path, docs: Sequence[LabeledDoc]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(d.to_json() + "\n")


def read_dataset(path) -> List[LabeledDoc]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc = LabeledDoc(str(rec["doc_id"]), [int(t) for t in rec["tokens"]],
                                 tuple(str(c) for c in rec["labels"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from None
            out.append(doc)
    return out
