"""Small shared fixtures for model-level tests."""
import numpy as np

from hienet.config import HieNetConfig
from hienet.synth import LabeledDoc
from hienet.tree import build_tree

TOY_CODES = [("A", "alpha"), ("A.1", "alpha one"), ("A.2", "alpha two"),
             ("B", "beta"), ("B.1", "beta one"), ("B.2", "beta two")]


def toy_tree():
    return build_tree(TOY_CODES)


def toy_config(**kw):
    base = dict(d_e=8, filter_sizes=(1, 3), d_c=4, max_len=16, dtype="float64", dropout=0.0,
                batch_size=4, max_epochs=3, bpr_max_epochs=5, lr=1e-2)
    base.update(kw)
    return HieNetConfig(**base)


def toy_docs(n=12, seed=0, vocab=20, length=16):
    """Each label owns two tokens; docs mention their labels' tokens plus noise."""
    rng = np.random.default_rng(seed)
    codes = [c for c, _ in TOY_CODES]
    groups = [["A.1", "B.1"], ["A.2", "B"], ["A", "B.2"], ["A.1", "A.2"]]
    docs = []
    for i in range(n):
        gold = groups[i % len(groups)]
        toks = []
        for c in gold:
            j = codes.index(c)
            toks += [1 + 2 * j, 2 + 2 * j]
        toks += rng.integers(13, vocab, length - len(toks)).tolist()
        rng.shuffle(toks)
        docs.append(LabeledDoc(f"d{i}", [int(t) for t in toks], tuple(sorted(gold))))
    return docs
