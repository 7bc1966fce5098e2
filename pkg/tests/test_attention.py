import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mannmt import attention as attn
from mannmt.autodiff import Value, check_gradients, ops
from mannmt.errors import ContractViolation
from mannmt.memory import HeadParameters

import oracles


def V(x):
    return Value(np.asarray(x, dtype=np.float64))


def source(states, lengths=None):
    states = np.asarray(states, dtype=np.float64)
    if lengths is None:
        lengths = np.full(states.shape[0], states.shape[1])
    return attn.EncodedSource(V(states), np.asarray(lengths))


def head(beta, gate, kernel, gamma):
    return HeadParameters(None, V(beta), V(gate), V(kernel), V(gamma))


# ------------------------------------------------------------------- score

def test_score_identity_is_dot_product():
    rng = np.random.default_rng(0)
    h, s = rng.normal(size=3), rng.normal(size=3)
    assert attn.luong_score(V(h), V(s), V(np.eye(3))).data.item() == pytest.approx(h @ s, abs=1e-14)


def test_score_zero_query():
    rng = np.random.default_rng(0)
    out = attn.luong_score(V(np.zeros((1, 3))), V(rng.normal(size=(1, 4, 3))), V(rng.normal(size=(3, 3))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_score_hand_example():
    out = attn.luong_score(V([1.0, 2.0]), V([3.0, 1.0]), V([[1.0, 0.0], [0.0, 2.0]]))
    assert out.data.item() == 7.0


# ------------------------------------------------------------------ weights

def test_zero_beta_uniform():
    rng = np.random.default_rng(1)
    w = attn.luong_weights(V(rng.normal(size=(1, 3))), source(rng.normal(size=(1, 5, 3))), V([[0.0]]),
                           V(rng.normal(size=(3, 3))))
    np.testing.assert_allclose(w.data, 0.2, atol=1e-15)


def test_single_valid_position():
    rng = np.random.default_rng(2)
    w = attn.luong_weights(V(rng.normal(size=(1, 3))), source(rng.normal(size=(1, 4, 3)), [1]), V([[1.0]]),
                           V(rng.normal(size=(3, 3))))
    np.testing.assert_array_equal(w.data, [[1.0, 0.0, 0.0, 0.0]])


def test_two_scores():
    # h = (1, 0), states (1, 0) and (0, 1), W_a = I gives scores (1, 0)
    w = attn.luong_weights(V([[1.0, 0.0]]), source([[[1.0, 0.0], [0.0, 1.0]]]), V([[1.0]]), V(np.eye(2)))
    np.testing.assert_allclose(w.data[0], [0.7311, 0.2689], atol=1e-4)


def test_empty_source_rejected():
    with pytest.raises(ContractViolation):
        attn.luong_weights(V([[1.0]]), attn.EncodedSource(V(np.zeros((1, 0, 1))), np.array([0])), V([[1.0]]),
                           V([[1.0]]))


def test_encoded_source_mask():
    s = source(np.zeros((2, 4, 3)), [4, 2])
    np.testing.assert_array_equal(s.mask, [[1, 1, 1, 1], [1, 1, 0, 0]])


# ------------------------------------------------------------ NTM-style

def test_ntm_reduces_to_luong():
    rng = np.random.default_rng(3)
    B, S, H = 3, 6, 4
    h, states, W_a = rng.normal(size=(B, H)), rng.normal(size=(B, S, H)), rng.normal(size=(H, H))
    src = source(states, [6, 3, 1])
    beta = rng.exponential(size=(B, 1))
    prev = np.stack([rng.dirichlet(np.ones(S)) * (np.arange(S) < n) for n in [6, 3, 1]])
    prev /= prev.sum(1, keepdims=True)
    res = attn.ntm_style_attention(V(h), src, head(beta, np.ones((B, 1)), attn.identity_kernel(B), np.ones((B, 1))),
                                   attn.AttentionState(V(prev), V(W_a)))
    plain = attn.luong_weights(V(h), src, V(beta), V(W_a))
    np.testing.assert_allclose(res.weights.data, plain.data, atol=1e-12)


def test_ntm_pure_shift_step():
    rng = np.random.default_rng(4)
    S, H = 6, 3
    prev = np.eye(S)[[2]]
    res = attn.ntm_style_attention(V(rng.normal(size=(1, H))), source(rng.normal(size=(1, S, H))),
                                   head([[2.0]], [[0.0]], [[0, 0, 1.0]], [[1.0]]),
                                   attn.AttentionState(V(prev), V(rng.normal(size=(H, H)))))
    np.testing.assert_array_equal(res.weights.data, np.eye(S)[[3]])


def test_shift_wraps_within_valid_length():
    rng = np.random.default_rng(5)
    S, H = 6, 3
    prev = np.eye(S)[[3]]
    res = attn.ntm_style_attention(V(rng.normal(size=(1, H))), source(rng.normal(size=(1, S, H)), [4]),
                                   head([[2.0]], [[0.0]], [[0, 0, 1.0]], [[1.0]]),
                                   attn.AttentionState(V(prev), V(rng.normal(size=(H, H)))))
    np.testing.assert_array_equal(res.weights.data, np.eye(S)[[0]])


def random_attention_case(rng):
    S, H = int(rng.integers(1, 9)), int(rng.integers(1, 6))
    length = int(rng.integers(1, S + 1))
    prev = np.zeros(S)
    prev[:length] = rng.dirichlet(np.ones(length))
    return dict(S=S, H=H, length=length, h=rng.normal(size=H), states=rng.normal(size=(S, H)),
                W_a=rng.normal(size=(H, H)), beta=float(rng.exponential(2.0)), g=float(rng.random()),
                kernel=rng.dirichlet(np.ones(3)), gamma=float(1 + rng.exponential(1.5)), prev=prev)


def run_case(c):
    src = source(c["states"][None], [c["length"]])
    return attn.ntm_style_attention(V(c["h"][None]), src, head([[c["beta"]]], [[c["g"]]], c["kernel"][None],
                                                                [[c["gamma"]]]),
                                    attn.AttentionState(V(c["prev"][None]), V(c["W_a"])))


def test_ntm_matches_reference():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        c = random_attention_case(rng)
        res = run_case(c)
        w, w_c, ctx = oracles.ntm_attention(c["h"].tolist(), c["states"].tolist(), c["W_a"].tolist(), c["beta"],
                                            c["g"], c["kernel"].tolist(), c["gamma"], c["prev"].tolist(),
                                            c["length"])
        worst = max(worst, np.abs(res.weights.data[0] - w).max(), np.abs(res.content.data[0] - w_c).max(),
                    np.abs(res.context.data[0] - ctx).max())
    assert worst < 1e-12


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_both_variants_simplex_with_zero_padding(seed):
    c = random_attention_case(np.random.default_rng(seed))
    res = run_case(c)
    plain = attn.luong_weights(V(c["h"][None]), source(c["states"][None], [c["length"]]), V([[c["beta"]]]),
                               V(c["W_a"]))
    for w in (res.weights.data[0], res.content.data[0], plain.data[0]):
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) < 1e-9
        assert np.all(w[c["length"]:] == 0.0)


def test_new_state_carries_weights():
    c = random_attention_case(np.random.default_rng(7))
    res = run_case(c)
    assert res.state.previous is res.weights


def test_initial_weights_one_hot_at_start():
    w = attn.initial_attention_weights(source(np.zeros((2, 3, 1)), [3, 1]))
    np.testing.assert_array_equal(w.data, [[1, 0, 0], [1, 0, 0]])


# --------------------------------------------------------------- gradients

def test_luong_attention_context_gradients():
    rng = np.random.default_rng(8)
    S, H = 7, 5
    probe = rng.normal(size=(2, H))

    def loss(h, states, W_a):
        src = attn.EncodedSource(states, np.array([7, 4]))
        w = attn.luong_weights(h, src, 1.0, W_a)
        return ops.sum(attn.context(w, src) * probe)

    report = check_gradients(loss, [rng.normal(size=(2, H)), rng.normal(size=(2, S, H)), rng.normal(size=(H, H))])
    assert report.max_relative_error < 1e-4


def test_ntm_attention_context_gradients():
    rng = np.random.default_rng(9)
    S, H = 7, 5
    probe = rng.normal(size=(2, H))
    prev = np.stack([rng.dirichlet(np.ones(S)), np.r_[rng.dirichlet(np.ones(4)), np.zeros(3)]])

    def loss(h, states, W_a, raw, prev):
        src = attn.EncodedSource(states, np.array([7, 4]))
        hd = attn.squash_attention_head(raw)
        res = attn.ntm_style_attention(h, src, hd, attn.AttentionState(prev, W_a))
        return ops.sum(res.context * probe)

    inputs = [rng.normal(size=(2, H)), rng.normal(size=(2, S, H)), rng.normal(size=(H, H)),
              rng.normal(size=(2, attn.ATTENTION_HEAD_SIZE)), prev]
    assert check_gradients(loss, inputs).max_relative_error < 1e-4


def test_squash_attention_head_ranges():
    hd = attn.squash_attention_head(V(np.random.default_rng(0).normal(size=(10, attn.ATTENTION_HEAD_SIZE)) * 5))
    assert np.all(hd.beta.data >= 0) and np.all(hd.gamma.data >= 1)
    assert np.all((hd.gate.data >= 0) & (hd.gate.data <= 1))
    np.testing.assert_allclose(hd.shift.data.sum(-1), 1.0, atol=1e-12)
