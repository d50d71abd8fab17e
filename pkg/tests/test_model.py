import numpy as np
import pytest

from hienet import autodiff as ad
from hienet import head
from hienet.model import HieNet
from hienet.trainer import DatasetError, build_model, evaluate, lambda_sweep, train, write_rows
from hienet.synth import LabeledDoc

from .toys import toy_config, toy_docs, toy_tree


def fitted(cfg, docs=None):
    docs = docs or toy_docs()
    m = build_model(cfg, toy_tree(), 20, docs)
    m.fit_hierarchy()
    return m, docs


def full_grad_setup():
    cfg = toy_config(joint_bpr=True, pm_lambda=0.3, seed=3)
    m, docs = fitted(cfg)
    m.params["score_bias"].data[:] = 1.0          # make sure PM confirms codes
    tokens, mask = m.batch(docs[:3])
    gold = m.gold_matrix(docs[:3])

    def f():
        out = m.forward(tokens, mask, train=False)
        loss = head.bce_loss(out.probs, gold)
        return ad.add(loss, m.joint_bpr_loss())
    return m, f, (tokens, mask)


def test_full_model_gradient_all_branches():
    m, f, (tokens, mask) = full_grad_setup()
    out = m.forward(tokens, mask)
    assert any(s.affected for t in out.traces for s in t.steps)
    assert np.abs(out.PPR.data - out.Araw.data).max() > 1e-6
    assert np.abs(out.P.data - out.Araw.data).max() > 1e-6
    assert tokens.shape[1] == 16 and m.L == 6
    err = ad.grad_check(f, list(m.params.values()), eps=1e-6)
    assert err <= 1e-4


def test_ablation_flags_change_only_their_branch():
    docs = toy_docs()
    tokens, mask = fitted(toy_config())[0].batch(docs[:4])
    outs = {}
    for mode in ("full", "no_pm", "no_pp", "no_bhpe"):
        m, _ = fitted(toy_config(mode=mode))
        m.params["score_bias"].data[:] = 1.0
        outs[mode] = m.forward(tokens, mask)
    f, npm, npp, nb = outs["full"], outs["no_pm"], outs["no_pp"], outs["no_bhpe"]
    assert any(len(t) for t in f.traces)
    # no_pm: same attention and propagation, P is the raw features
    np.testing.assert_array_equal(npm.Araw.data, f.Araw.data)
    np.testing.assert_array_equal(npm.PPR.data, f.PPR.data)
    np.testing.assert_array_equal(npm.P.data, npm.Araw.data)
    assert not npm.traces
    # no_pp: same attention, propagation replaced by identity
    np.testing.assert_array_equal(npp.Araw.data, f.Araw.data)
    np.testing.assert_array_equal(npp.PPR.data, npp.Araw.data)
    # no_bhpe: only the code representations (and so attention) move
    assert not np.array_equal(nb.Araw.data, f.Araw.data)
    m_nb, _ = fitted(toy_config(mode="no_bhpe"))
    m_f, _ = fitted(toy_config())
    np.testing.assert_array_equal(m_nb.code_repr().data, m_nb.inits[1:].T)
    for k in m_f.params:
        np.testing.assert_array_equal(m_nb.params[k].data, m_f.params[k].data)


def test_lambda_zero_equals_no_pm():
    docs = toy_docs()
    m, _ = fitted(toy_config(pm_lambda=0.0))
    n, _ = fitted(toy_config(mode="no_pm"))
    np.testing.assert_array_equal(m.predict(docs), n.predict(docs))
    m.cfg = m.cfg.replace(pm_lambda=0.5)
    sweep = lambda_sweep(m, docs, [0.0, 0.5])
    assert sweep[0] == {"lambda": 0.0, **evaluate(n, docs).row()}
    assert lambda_sweep(m, docs, [0.0, 0.5]) == sweep and m.cfg.pm_lambda == 0.5


def test_logit_blend_variant_runs():
    m, docs = fitted(toy_config(pm_blend="logits"))
    m.params["score_bias"].data[:] = 1.0
    P, traces = m.predict(docs[:3], keep_traces=True)
    assert P.shape == (3, 6) and len(traces) == 3 and all(len(t) for t in traces)


def test_lr_zero_keeps_parameters():
    cfg = toy_config(lr=0.0, max_epochs=2, dropout=0.2)
    docs = toy_docs()
    init = build_model(cfg, toy_tree(), 20, docs)
    res = train(cfg, docs, docs[:4], toy_tree(), 20)
    for k, v in init.params.items():
        assert np.array_equal(res.model.params[k].data, v.data)


def test_overfit_single_document():
    doc = LabeledDoc("x", [1, 2, 7, 8] + [15] * 12, ("A", "B.1"))
    cfg = toy_config(lr=1e-2, max_epochs=200, patience=1000, batch_size=1)
    res = train(cfg, [doc], [], toy_tree(), 20)
    assert res.log[-1]["train_loss"] < 0.05


def test_early_stop_at_patience():
    cfg = toy_config(lr=0.0, max_epochs=30, patience=10)
    res = train(cfg, toy_docs(), toy_docs(4, seed=1), toy_tree(), 20)
    assert res.stopped_early and res.best_epoch == 1 and res.epochs_run == 11


def test_train_restores_best_and_logs(tmp_path):
    cfg = toy_config(max_epochs=4)
    res = train(cfg, toy_docs(), toy_docs(4, seed=1), toy_tree(), 20, log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert len(lines) == 5 and lines[0].startswith("epoch,train_loss,val_")
    assert evaluate(res.model, toy_docs(4, seed=1)).micro_f1 == res.best_val


def test_reproducible_bytes(tmp_path):
    outs = []
    for run in ("a", "b"):
        res = train(toy_config(max_epochs=2, dropout=0.2), toy_docs(), toy_docs(4, seed=1), toy_tree(), 20)
        res.model.save(tmp_path / f"{run}.ckpt")
        write_rows(tmp_path / f"{run}.csv", [evaluate(res.model, toy_docs(4, seed=2)).row()])
        outs.append(((tmp_path / f"{run}.ckpt").read_bytes(), (tmp_path / f"{run}.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_save_load_roundtrip(tmp_path):
    m, docs = fitted(toy_config(joint_bpr=True))
    m.save(tmp_path / "m.ckpt")
    back = HieNet.load(tmp_path / "m.ckpt", toy_tree())
    np.testing.assert_array_equal(back.predict(docs), m.predict(docs))
    back.save(tmp_path / "n.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "n.ckpt").read_bytes()


def test_dataset_errors():
    bad = [LabeledDoc("z", [1, 2, 3], ("Q.9",))]
    with pytest.raises(DatasetError, match="Q.9"):
        train(toy_config(), bad, [], toy_tree(), 20)
    with pytest.raises(DatasetError, match="token id"):
        train(toy_config(), [LabeledDoc("z", [25], ("A",))], [], toy_tree(), 20)


def test_float32_default_path():
    m, docs = fitted(toy_config(dtype="float32"))
    P = m.predict(docs)
    assert P.dtype == np.float32 and np.all((P > 0) & (P < 1))
