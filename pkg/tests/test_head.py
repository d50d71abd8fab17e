import math

import numpy as np
import pytest

from hienet import autodiff as ad
from hienet import head
from hienet.autodiff import ShapeError, Tensor
from hienet.graph import PprConfig, build_graph, ppr_closed_form


def params(d_h, d_e, L, seed=0):
    return head.init_head_params(d_h, d_e, L, np.random.default_rng(seed))


def test_single_position_attention():
    p = params(3, 2, 4)
    H = Tensor(np.random.default_rng(1).standard_normal((1, 3)))
    Vpt = Tensor(np.random.default_rng(2).standard_normal((2, 4)))
    A, S = head.code_wise_attention(H, Vpt, p)
    np.testing.assert_array_equal(S.data, np.ones((4, 1)))
    Z = np.tanh(H.data @ p["W_a"].data.T + p["b_a"].data)
    np.testing.assert_allclose(A.data, np.repeat(Z, 4, axis=0), atol=1e-15)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(3)
    p = params(6, 4, 5)
    H = Tensor(rng.standard_normal((3, 9, 6)))
    mask = np.ones((3, 9), bool)
    mask[1, 5:] = False
    _, S = head.code_wise_attention(H, Tensor(rng.standard_normal((4, 5))), p, mask)
    np.testing.assert_allclose(S.data.sum(-1), 1.0, atol=1e-12)
    assert not S.data[1, :, 5:].any()


def test_attention_hand_case():
    p = params(2, 2, 2)
    p["W_a"].data = np.eye(2)
    H = np.array([[0.5, -1.0], [2.0, 0.3]])
    V = np.array([[1.0, 0.0], [0.5, 2.0]])          # columns are codes
    A, S = head.code_wise_attention(Tensor(H), Tensor(V), p)
    z = [[math.tanh(x) for x in row] for row in H]
    for l in range(2):
        sc = [z[n][0] * V[0, l] + z[n][1] * V[1, l] for n in range(2)]
        e = [math.exp(s) for s in sc]
        w = [x / sum(e) for x in e]
        assert S.data[l].tolist() == pytest.approx(w, abs=1e-14)
        assert A.data[l].tolist() == pytest.approx([w[0] * z[0][j] + w[1] * z[1][j] for j in range(2)], abs=1e-14)


def test_attention_shape_errors():
    p = params(3, 2, 4)
    with pytest.raises(ShapeError):
        head.code_wise_attention(Tensor(np.zeros((5, 4))), Tensor(np.zeros((2, 4))), p)
    with pytest.raises(ShapeError):
        head.code_wise_attention(Tensor(np.zeros((5, 3))), Tensor(np.zeros((3, 4))), p)


def test_ppr_branch_cases():
    rng = np.random.default_rng(4)
    A = Tensor(rng.standard_normal((2, 3, 4)))
    g0 = build_graph([], 3)
    out = head.ppr_branch(A, ppr_closed_form(g0, PprConfig(0.5), np.eye(3)))
    np.testing.assert_array_equal(out.data, A.data)
    tri = build_graph([{0, 1, 2}], 3)
    np.testing.assert_allclose(head.ppr_branch(A, ppr_closed_form(tri, PprConfig(0.999), np.eye(3))).data,
                               A.data, atol=5e-3)
    # Neumann oracle on the triangle, d = 0.5
    S, term = np.zeros((3, 3)), np.eye(3)
    for _ in range(200):
        S += term
        term = 0.5 * tri.A_hat @ term
    out = head.ppr_branch(A, ppr_closed_form(tri, PprConfig(0.5), np.eye(3))).data
    np.testing.assert_allclose(out, np.einsum("ij,bjk->bik", 0.5 * S, A.data), atol=1e-12)
    with pytest.raises(ShapeError):
        head.ppr_branch(A, np.eye(4))


def test_aggregate_cases():
    rng = np.random.default_rng(5)
    L, d = 3, 4
    p = params(6, d, L)
    zeros = Tensor(np.zeros((L, d)))
    _, probs = head.aggregate(zeros, zeros, p)
    np.testing.assert_array_equal(probs.data, 0.5)

    p["score_vecs"].data[1] = 0.0
    p["score_bias"].data[1] = 0.7
    for _ in range(3):
        P, Q = Tensor(rng.standard_normal((L, d))), Tensor(rng.standard_normal((L, d)))
        assert head.aggregate(P, Q, p)[1].data[1] == 1 / (1 + math.exp(-0.7))

    # hand 2-code scalar oracle, d_e = 1
    q = params(2, 1, 2)
    q["W_fc"].data = np.array([[0.5, -2.0]])
    q["score_vecs"].data = np.array([[1.5], [-1.0]])
    q["score_bias"].data = np.array([0.1, 0.2])
    P, Q = np.array([[1.0], [2.0]]), np.array([[3.0], [-1.0]])
    logits, probs = head.aggregate(Tensor(P), Tensor(Q), q)
    exp = [1.5 * (0.5 * 1 - 2 * 3) + 0.1, -1.0 * (0.5 * 2 - 2 * -1) + 0.2]
    assert logits.data.tolist() == pytest.approx(exp, abs=1e-14)
    assert probs.data.tolist() == pytest.approx([1 / (1 + math.exp(-z)) for z in exp], abs=1e-14)
    np.testing.assert_allclose(head.logits_numpy(P, Q, q), logits.data, atol=1e-15)


def test_aggregate_identity_fc_scores_p_alone():
    rng = np.random.default_rng(6)
    L, d = 4, 3
    p = params(5, d, L)
    p["W_fc"].data = np.hstack([np.eye(d), np.zeros((d, d))])
    P = Tensor(rng.standard_normal((L, d)))
    a = head.aggregate(P, Tensor(rng.standard_normal((L, d))), p)[0].data
    b = head.aggregate(P, Tensor(rng.standard_normal((L, d))), p)[0].data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a, (P.data * p["score_vecs"].data).sum(1) + p["score_bias"].data)
    with pytest.raises(ShapeError):
        head.aggregate(P, Tensor(np.zeros((L, d + 1))), p)


def test_bce_cases():
    L = 7
    for gold in (np.zeros(L), np.ones(L), (np.arange(L) % 2).astype(float)):
        val = float(head.bce_loss(Tensor(np.full(L, 0.5)), gold).data)
        assert abs(val - L * math.log(2)) <= 1e-12
        exact = float(head.bce_loss(Tensor(gold.copy()), gold).data)
        assert exact == pytest.approx(-L * math.log(1 - 1e-7), rel=1e-9)
    probs, gold = [0.8, 0.3, 0.6], [1, 0, 0]
    oracle = -(math.log(0.8) + math.log(0.7) + math.log(0.4))
    assert float(head.bce_loss(Tensor(np.array(probs)), np.array(gold)).data) == pytest.approx(oracle, abs=1e-14)
    batch = Tensor(np.array([probs, [0.5, 0.5, 0.5]]))
    both = float(head.bce_loss(batch, np.array([gold, [1, 1, 0]])).data)
    assert both == pytest.approx((oracle + 3 * math.log(2)) / 2, abs=1e-14)
    with pytest.raises(ShapeError):
        head.bce_loss(Tensor(np.full(3, 0.5)), np.zeros(4))


def test_head_gradients():
    rng = np.random.default_rng(7)
    p = params(5, 3, 4)
    H = Tensor(rng.standard_normal((2, 6, 5)), True)
    Vpt = Tensor(rng.standard_normal((3, 4)), True)
    g = build_graph([{0, 1}, {1, 2}], 4)
    Pi = ppr_closed_form(g, PprConfig(0.5), np.eye(4))
    gold = (rng.random((2, 4)) < 0.5).astype(float)
    mask = np.ones((2, 6), bool)
    mask[0, 4:] = False

    def f():
        A, _ = head.code_wise_attention(H, Vpt, p, mask)
        _, probs = head.aggregate(A, head.ppr_branch(A, Pi), p)
        return head.bce_loss(probs, gold)
    assert ad.grad_check(f, [H, Vpt, *p.values()]) <= 1e-6
