import csv
import json

import numpy as np
import pytest

from hienet.cli import main

SMALL = ["--set", "n_train=60", "--set", "n_val=20", "--set", "n_test=20"]
CFG = "d_e=8\nfilter_sizes=1,3\nd_c=4\nmax_epochs=2\nlr=1e-3\n"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.txt").write_text(CFG)
    assert main(["gen-data", "--out", str(d / "data"), *SMALL]) == 0
    assert main(["train", "--data", str(d / "data"), "--tree", str(d / "data/tree.json"),
                 "--config", str(d / "cfg.txt"), "--out", str(d / "m.ckpt"), "--log", str(d / "log.csv")]) == 0
    return d


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert "gen-data" in capsys.readouterr().out
    assert main([]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["build-tree", "--bogus"]) == 2
    assert main(["lambda-sweep", "--model", "m", "--tree", "t", "--data", "d", "--out", "o",
                 "--values", "a,b"]) == 2


def test_seed_env(monkeypatch, tmp_path):
    monkeypatch.setenv("HIENET_SEED", "11")
    assert main(["gen-data", "--out", str(tmp_path / "a"), *SMALL]) == 0
    man = json.loads((tmp_path / "a/manifest.json").read_text())
    assert man["seed"] == 11 and man["config"]["seed"] == 11
    monkeypatch.setenv("HIENET_SEED", "eleven")
    assert main(["gen-data", "--out", str(tmp_path / "b")]) == 2


def test_pipeline_outputs_and_manifests(pipeline):
    d = pipeline
    man = json.loads((d / "m.ckpt.manifest.json").read_text())
    assert set(man) >= {"seed", "config", "versions", "inputs", "outputs"}
    assert str(d / "data/train.jsonl") in man["inputs"]
    assert man["config"]["d_e"] == 8 and man["outputs"][0] == str(d / "m.ckpt")

    assert main(["evaluate", "--model", str(d / "m.ckpt"), "--tree", str(d / "data/tree.json"),
                 "--data", str(d / "data/test.jsonl"), "--out", str(d / "metrics.csv")]) == 0
    with open(d / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    for col in ("jaccard_top20", "jaccard_top30", "macro_auc", "micro_auc", "macro_f1", "micro_f1",
                "p_at_5", "p_at_8", "p_at_15"):
        assert 0.0 <= float(rows[0][col]) <= 1.0

    assert main(["predict", "--model", str(d / "m.ckpt"), "--tree", str(d / "data/tree.json"),
                 "--data", str(d / "data/test.jsonl"), "--out", str(d / "p.jsonl"), "--top", "4",
                 "--traces"]) == 0
    recs = [json.loads(x) for x in (d / "p.jsonl").read_text().splitlines()]
    assert len(recs) == 20 and [c["rank"] for c in recs[0]["codes"]] == [1, 2, 3, 4]
    probs = [c["prob"] for c in recs[0]["codes"]]
    assert probs == sorted(probs, reverse=True) and "trace" in recs[0]

    assert main(["lambda-sweep", "--model", str(d / "m.ckpt"), "--tree", str(d / "data/tree.json"),
                 "--data", str(d / "data/test.jsonl"), "--out", str(d / "s.csv"), "--values", "0,0.5"]) == 0
    assert main(["evaluate", "--model", str(d / "m.ckpt"), "--tree", str(d / "data/tree.json"),
                 "--data", str(d / "data/test.jsonl"), "--out", str(d / "nopm.csv"), "--set", "mode=no_pm"]) == 0
    with open(d / "s.csv") as fh:
        sweep = list(csv.DictReader(fh))
    with open(d / "nopm.csv") as fh:
        nopm = next(csv.DictReader(fh))
    assert [r["lambda"] for r in sweep] == ["0.0", "0.5"]
    assert all(sweep[0][k] == nopm[k] for k in sweep[0] if k != "lambda")


def test_structure_subcommands(tmp_path, pipeline):
    data = pipeline / "data"
    t = str(tmp_path / "tree.json")
    assert main(["build-tree", "--codes", str(data / "codes.tsv"), "--out", t]) == 0
    assert (tmp_path / "tree.json").read_bytes() == (data / "tree.json").read_bytes()
    assert main(["encode-positions", "--tree", t, "--out", str(tmp_path / "pos.csv"), "--d-e", "4"]) == 0
    with open(tmp_path / "pos.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 50 and len({r["position"] for r in rows}) == 50
    assert main(["build-graph", "--tree", t, "--data", str(data / "train.jsonl"),
                 "--out", str(tmp_path / "e.csv")]) == 0
    for mode in ("closed", "iterate"):
        assert main(["ppr", "--tree", t, "--edges", str(tmp_path / "e.csv"), "--mode", mode,
                     "--out", str(tmp_path / f"{mode}.csv")]) == 0
    a = np.loadtxt(tmp_path / "closed.csv", delimiter=",")
    b = np.loadtxt(tmp_path / "iterate.csv", delimiter=",")
    assert a.shape == (50, 50) and np.abs(a - b).max() < 1e-8


def test_runtime_errors_exit_one(tmp_path, capsys):
    assert main(["build-tree", "--codes", str(tmp_path / "missing.tsv"), "--out", str(tmp_path / "t.json")]) == 1
    assert "input not found" in capsys.readouterr().err
    (tmp_path / "bad.tsv").write_text("A\talpha\nA\tagain\n")
    assert main(["build-tree", "--codes", str(tmp_path / "bad.tsv"), "--out", str(tmp_path / "t.json")]) == 1
    assert json.loads((tmp_path / "t.json.manifest.json").read_text())["error"]


def test_reproducible_cli_runs(tmp_path, pipeline):
    data, outs = pipeline / "data", []
    for run in ("a", "b"):
        (tmp_path / run).mkdir()
        ck, met = tmp_path / run / "m.ckpt", tmp_path / run / "m.csv"
        assert main(["train", "--data", str(data), "--tree", str(data / "tree.json"),
                     "--config", str(pipeline / "cfg.txt"), "--out", str(ck)]) == 0
        assert main(["evaluate", "--model", str(ck), "--tree", str(data / "tree.json"),
                     "--data", str(data / "test.jsonl"), "--out", str(met)]) == 0
        outs.append((ck.read_bytes(), met.read_bytes()))
    assert outs[0] == outs[1]
