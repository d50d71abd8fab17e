"""Command-line entry point: ``hienet <subcommand> ...``.

Every run writes a JSON manifest (seed, configuration, library versions,
input hashes, output paths) next to its primary output, or to ``--manifest``.
Usage errors exit with status 2, runtime failures with status 1.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .config import HieNetConfig, as_dict, from_mapping, load_config
from .graph import PprConfig, build_graph, load_edges, ppr_closed_form, ppr_iterate, save_edges
from .model import HieNet
from .position import PosProjection, encode_path, project_all, raw_positions
from .synth import GenConfig, generate, planted_clique_config, read_dataset, write_dataset
from .trainer import (ablate, ablation_rows, evaluate, label_sets, lambda_sweep, toy_grad_check,
                      train, write_rows)
from .tree import build_tree, load_tree, read_code_file, save_tree, write_code_file

SEED_ENV = "HIENET_SEED"
log = logging.getLogger("hienet")


class RunError(RuntimeError):
    pass


# ------------------------------------------------------------------ manifest

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects what a subcommand read and wrote, then writes the manifest."""

    def __init__(self, args):
        self.args = args
        self.inputs: Dict[str, str] = {}
        self.outputs: List[str] = []
        self.config: dict = {}
        self.extra: dict = {}

    def read(self, path) -> Path:
        p = Path(path)
        if not p.exists():
            raise RunError(f"input not found: {p}")
        if p.is_file():
            self.inputs[str(p)] = sha256(p)
        return p

    def wrote(self, path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    def manifest(self) -> dict:
        return {
            "command": self.args.command,
            "argv": self.args.argv,
            "seed": self.args.seed,
            "config": self.config,
            "versions": {"hienet": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "inputs": {k: self.inputs[k] for k in sorted(self.inputs)},
            "outputs": self.outputs,
            **self.extra,
        }

    def write_manifest(self) -> Path:
        path = self.args.manifest
        if path is None:
            out = Path(self.args.out)
            path = out / "manifest.json" if self.args.command == "gen-data" else Path(f"{out}.manifest.json")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")
        return path


# ------------------------------------------------------------------- helpers

def parse_sets(items: Optional[Sequence[str]]) -> Dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise RunError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def model_config(run: Run) -> HieNetConfig:
    a = run.args
    if a.config:
        run.read(a.config)
    overrides = parse_sets(a.set)
    overrides.setdefault("seed", str(a.seed))
    cfg = load_config(HieNetConfig, a.config, overrides)
    run.config = {k: list(v) if isinstance(v, tuple) else v for k, v in as_dict(cfg).items()}
    return cfg


def read_docs(run: Run, path):
    return read_dataset(run.read(path))


def data_paths(run: Run, directory) -> Dict[str, Path]:
    d = run.read(directory)
    return {name: d / f"{name}.jsonl" for name in ("train", "val", "test")}


def vocab_size(run: Run, directory, explicit: Optional[int], docs) -> int:
    if explicit:
        return explicit
    meta = Path(directory) / "meta.json"
    if meta.exists():
        run.read(meta)
        return int(json.loads(meta.read_text())["vocab_size"])
    return 1 + max((max(d.tokens) for d in docs if d.tokens), default=0)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def load_model(run: Run, args) -> HieNet:
    tree = load_tree(run.read(args.tree))
    model = HieNet.load(run.read(args.model), tree, parse_sets(getattr(args, "set", None)))
    run.config = {k: list(v) if isinstance(v, tuple) else v for k, v in as_dict(model.cfg).items()}
    return model


# --------------------------------------------------------------- subcommands

def cmd_gen_data(run: Run) -> None:
    a = run.args
    base = planted_clique_config(a.seed) if a.preset == "planted" else GenConfig(seed=a.seed)
    cfg = from_mapping(GenConfig, parse_sets(a.set), base)
    run.config = as_dict(cfg)
    corpus = generate(cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    run.wrote(out)
    write_code_file(run.wrote(out / "codes.tsv"),
                    [(c, " ".join(corpus.tree.nodes[c].description)) for c in corpus.tree.codes])
    save_tree(corpus.tree, run.wrote(out / "tree.json"))
    for split in ("train", "val", "test"):
        write_dataset(run.wrote(out / f"{split}.jsonl"), getattr(corpus, split))
    (run.wrote(out / "meta.json")).write_text(json.dumps({"vocab_size": corpus.vocab_size}) + "\n")
    (run.wrote(out / "planted.json")).write_text(json.dumps(corpus.planted, sort_keys=True) + "\n")


def cmd_build_tree(run: Run) -> None:
    t = build_tree(read_code_file(run.read(run.args.codes)))
    save_tree(t, run.wrote(run.args.out))
    run.extra["tree"] = {"codes": len(t.codes), "max_branching": t.max_branching, "max_depth": t.max_depth}


def cmd_encode_positions(run: Run) -> None:
    a = run.args
    t = load_tree(run.read(a.tree))
    n, k = a.n or max(1, t.max_branching), a.k or max(1, t.max_depth)
    raw = raw_positions(t, t.codes, n, k)
    rows = []
    proj = project_all(t, PosProjection.orthonormal(a.d_e, n * k, seed=a.seed), t.codes, n, k) if a.d_e else None
    for j, code in enumerate(t.codes):
        bits = "".join(str(int(v)) for v in raw[:, j])
        row = [code, encode_path(t, code, n, k).depth, bits]
        if proj is not None:
            row.append(" ".join(repr(float(v)) for v in proj[:, j]))
        rows.append(row)
    header = ["code", "depth", "position"] + (["projected"] if proj is not None else [])
    write_csv(run.wrote(a.out), header, rows)
    run.config = {"n": n, "k": k, "d_e": a.d_e}


def cmd_build_graph(run: Run) -> None:
    a = run.args
    t = load_tree(run.read(a.tree))
    g = build_graph(label_sets(read_docs(run, a.data), t), len(t.codes), a.weighted)
    save_edges(g, run.wrote(a.out))
    run.extra["graph"] = {"nodes": g.L, "edges": len(g.edges())}


def cmd_ppr(run: Run) -> None:
    a = run.args
    X = np.loadtxt(run.read(a.features), delimiter=",", ndmin=2) if a.features else None
    if a.tree:
        L = len(load_tree(run.read(a.tree)).codes)
    else:
        L = X.shape[0] if X is not None else None
    g = load_edges(run.read(a.edges), L=L)
    cfg = PprConfig(a.d, a.max_iters, a.tol)
    run.config = {"d": a.d, "max_iters": a.max_iters, "tol": a.tol, "mode": a.mode}
    if X is None:
        X = np.eye(g.L)
    elif X.shape[0] != g.L:
        raise RunError(f"features have {X.shape[0]} rows, graph has {g.L} nodes")
    if a.mode == "iterate":
        res = ppr_iterate(g, cfg, X)
        Z = res.Z
        run.extra["ppr"] = {"converged": res.converged, "iterations": res.iterations,
                            "residual": res.residual}
        if not res.converged:
            log.warning("PageRank iteration did not converge (residual %.3g)", res.residual)
    else:
        Z = ppr_closed_form(g, cfg, X)
    np.savetxt(run.wrote(a.out), Z, delimiter=",", fmt="%.17g")


def cmd_train(run: Run) -> None:
    a = run.args
    cfg = model_config(run)
    paths = data_paths(run, a.data)
    tr, va = read_docs(run, paths["train"]), read_docs(run, paths["val"])
    tree = load_tree(run.read(a.tree))
    vs = vocab_size(run, a.data, a.vocab_size, tr)
    ckpt = run.wrote(a.out)
    res = train(cfg, tr, va, tree, vs, log_path=run.wrote(a.log) if a.log else None)
    res.model.save(ckpt, {"best_epoch": res.best_epoch, "best_val_micro_f1": res.best_val})
    run.extra["train"] = {"best_epoch": res.best_epoch, "best_val_micro_f1": res.best_val,
                          "epochs_run": res.epochs_run, "stopped_early": res.stopped_early}


def cmd_evaluate(run: Run) -> None:
    a = run.args
    model = load_model(run, a)
    r = evaluate(model, read_docs(run, a.data))
    row = {"model": Path(a.model).name, **r.row()}
    write_rows(run.wrote(a.out), [row])
    run.extra["skipped_empty_gold"] = r.skipped


def cmd_predict(run: Run) -> None:
    a = run.args
    model = load_model(run, a)
    docs = read_docs(run, a.data)
    probs, traces = model.predict(docs, keep_traces=True)
    with open(run.wrote(a.out), "w", encoding="utf-8") as fh:
        for i, d in enumerate(docs):
            order = np.argsort(-probs[i], kind="stable")[: a.top or model.L]
            rec = {"doc_id": d.doc_id,
                   "codes": [{"code": model.labels[j], "prob": float(probs[i, j]), "rank": r + 1}
                             for r, j in enumerate(order)]}
            if a.traces and traces:
                rec["trace"] = json.loads(traces[i].to_json(model.labels))
            fh.write(json.dumps(rec) + "\n")


def cmd_ablate(run: Run) -> None:
    a = run.args
    cfg = model_config(run)
    paths = data_paths(run, a.data)
    tr, va, te = (read_docs(run, paths[s]) for s in ("train", "val", "test"))
    tree = load_tree(run.read(a.tree))
    res = ablate(cfg, tr, va, te, tree, vocab_size(run, a.data, a.vocab_size, tr), a.modes)
    write_rows(run.wrote(a.out), ablation_rows(res))


def cmd_lambda_sweep(run: Run) -> None:
    a = run.args
    model = load_model(run, a)
    rows = lambda_sweep(model, read_docs(run, a.data), a.values)
    write_rows(run.wrote(a.out), rows)


def cmd_grad_check(run: Run) -> None:
    a = run.args
    res = toy_grad_check(a.seed)
    res["tolerance"] = a.tol
    res["passed"] = res["max_rel_err"] <= a.tol
    Path(run.wrote(a.out)).write_text(json.dumps(res, indent=1, sort_keys=True) + "\n")
    print(f"max relative error {res['max_rel_err']:.3e} (tolerance {a.tol:g})")
    if not res["passed"]:
        raise RunError("gradient check failed")


# -------------------------------------------------------------------- parser

def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 7
    try:
        return int(raw)
    except ValueError:
        raise RunError(f"{SEED_ENV} must be an integer, got {raw!r}")


def float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser(seed: int) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hienet", description="Hierarchical multi-label code assignment.")
    p.add_argument("--version", action="version", version=f"hienet {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=seed, help=f"random seed (default ${SEED_ENV} or 7)")
        sp.add_argument("--manifest", help="where to write the run manifest")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    def model_flags(sp, overrides=True):
        sp.add_argument("--config", help="key=value configuration file")
        if overrides:
            sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    sp = add("gen-data", cmd_gen_data, "generate a synthetic corpus with planted structure")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--preset", choices=("default", "planted"), default="default")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one generator setting")

    sp = add("build-tree", cmd_build_tree, "build the code tree from a TAB-separated code file")
    sp.add_argument("--codes", required=True)
    sp.add_argument("--out", required=True)

    sp = add("encode-positions", cmd_encode_positions, "write tree position encodings as CSV")
    sp.add_argument("--tree", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=0, help="branching capacity (default: from tree)")
    sp.add_argument("--k", type=int, default=0, help="depth capacity (default: from tree)")
    sp.add_argument("--d-e", type=int, default=0, help="also write projections to this width")

    sp = add("build-graph", cmd_build_graph, "build the label co-occurrence graph from training labels")
    sp.add_argument("--tree", required=True)
    sp.add_argument("--data", "--dataset", dest="data", required=True, help="JSONL dataset")
    sp.add_argument("--out", required=True, help="edge list CSV")
    sp.add_argument("--weighted", action="store_true")

    sp = add("ppr", cmd_ppr, "propagate node features with personalized PageRank")
    sp.add_argument("--tree", help="code tree fixing the node count (default: from edges or features)")
    sp.add_argument("--edges", required=True)
    sp.add_argument("--features", "--in", dest="features",
                    help="CSV with one row per code (default: identity)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--d", type=float, default=0.5, help="teleport probability")
    sp.add_argument("--mode", choices=("closed", "iterate"), default="closed")
    sp.add_argument("--max-iters", type=int, default=50)
    sp.add_argument("--tol", type=float, default=1e-10)

    sp = add("train", cmd_train, "train a model")
    sp.add_argument("--data", required=True, help="directory with train.jsonl and val.jsonl")
    sp.add_argument("--tree", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--log", help="per-epoch metrics CSV")
    sp.add_argument("--vocab-size", type=int)
    model_flags(sp)

    for name, fn, text in (("evaluate", cmd_evaluate, "score a checkpoint on a dataset"),
                           ("predict", cmd_predict, "write ranked predictions as JSON lines"),
                           ("lambda-sweep", cmd_lambda_sweep, "evaluate a checkpoint over blend factors")):
        sp = add(name, fn, text)
        sp.add_argument("--model", required=True)
        sp.add_argument("--tree", required=True)
        sp.add_argument("--data", required=True, help="JSONL dataset")
        sp.add_argument("--out", required=True)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if name == "predict":
            sp.add_argument("--top", type=int, default=0, help="codes per document (default: all)")
            sp.add_argument("--traces", action="store_true", help="include progressive traces")
        if name == "lambda-sweep":
            sp.add_argument("--values", type=float_list,
                            default=[round(0.1 * i, 1) for i in range(11)])

    sp = add("ablate", cmd_ablate, "train and test each ablation mode")
    sp.add_argument("--data", required=True, help="directory with train/val/test JSONL")
    sp.add_argument("--tree", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--modes", nargs="+", choices=("full", "no_pm", "no_bhpe", "no_pp"),
                    default=["full", "no_pm", "no_bhpe", "no_pp"])
    sp.add_argument("--vocab-size", type=int)
    model_flags(sp)

    sp = add("grad-check", cmd_grad_check, "finite-difference check of the full model gradient")
    sp.add_argument("--out", required=True)
    sp.add_argument("--tol", type=float, default=1e-4)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        seed = default_seed()
    except RunError as e:
        print(f"hienet: error: {e}", file=sys.stderr)
        return 2
    parser = build_parser(seed)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args)
    try:
        args.func(run)
    except (RunError, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"hienet {args.command}: error: {msg}", file=sys.stderr)
        run.extra["error"] = str(msg)
        run.write_manifest()
        return 1
    run.write_manifest()
    return 0


if __name__ == "__main__":
    sys.exit(main())
