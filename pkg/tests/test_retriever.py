import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reticl import retriever
from reticl.retriever import (
    LatentState,
    encode_problem,
    episode_forward,
    greedy_action,
    init_parameters,
    policy,
    sample_action,
    step,
    value_estimate,
)

from conftest import tiny_params, unit_rows


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def test_init_orthogonal_weights():
    params = init_parameters(10, 6, seed=0)
    # Gram matrix over the smaller dimension is the identity
    for name in ("W_c", "W_a"):
        w = getattr(params, name)
        assert np.allclose(w.T @ w, np.eye(6), atol=1e-10)
    assert np.allclose(params.W_ih.T @ params.W_ih, np.eye(6), atol=1e-10)
    assert np.allclose(params.W_hh.T @ params.W_hh, np.eye(10), atol=1e-10)
    assert np.isclose(np.linalg.norm(params.w_v), 1.0)


def test_init_zero_biases_and_shapes():
    params = init_parameters(7, 4, seed=1)
    assert not params.b_c.any() and not params.b_ih.any() and not params.b_hh.any()
    assert params.b_v == 0.0
    assert params.W_ih.shape == (28, 4)
    assert params.W_hh.shape == (28, 7)
    assert params.d_h == 7 and params.d_e == 4


def test_init_deterministic_per_seed():
    a = init_parameters(5, 3, seed=42)
    b = init_parameters(5, 3, seed=42)
    c = init_parameters(5, 3, seed=43)
    for name, t in a.tensors().items():
        assert np.array_equal(t, b.tensors()[name])
    assert not np.array_equal(a.W_c, c.W_c)


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        init_parameters(0, 3, seed=0)
    with pytest.raises(ValueError):
        init_parameters(3, -1, seed=0)


def test_params_tensor_round_trip():
    params = tiny_params()
    back = retriever.PolicyParameters.from_tensors(params.tensors())
    for name, t in params.tensors().items():
        assert np.array_equal(t, back.tensors()[name])


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------

def test_encode_problem_matches_formula():
    params = tiny_params(d_h=4, d_e=3, seed=0)
    x = unit_rows(np.random.default_rng(5), 1, 3)[0]
    state = encode_problem(x, params)
    assert np.allclose(state.h, np.tanh(params.W_c @ x + params.b_c))
    assert not state.c.any()
    assert state.t == 0 and state.selected == ()


def test_encode_problem_rejects_bad_input():
    params = tiny_params(d_h=4, d_e=3)
    with pytest.raises(ValueError, match="shape"):
        encode_problem(np.ones(5), params)
    with pytest.raises(ValueError, match="unit-norm"):
        encode_problem(np.full(3, 0.9), params)


def test_step_zero_weights_hand_case():
    # all-zero weights: gates sigmoid(0)=0.5, cell candidate tanh(0)=0, so
    # c' = 0.5*c and h' = 0.5*tanh(c')
    zeros = {name: np.zeros_like(t) for name, t in tiny_params(4, 3).tensors().items()}
    params = retriever.PolicyParameters.from_tensors(zeros)
    c0 = np.array([0.4, -0.2, 0.0, 1.0])
    state = LatentState(h=np.zeros(4), c=c0, t=0, selected=())
    out = step(state, np.ones(3), 0, params)
    assert np.allclose(out.c, 0.5 * c0, atol=1e-12)
    assert np.allclose(out.h, 0.5 * np.tanh(0.5 * c0), atol=1e-12)
    assert out.t == 1 and out.selected == (0,)


def test_step_rejects_repeat_selection():
    params = tiny_params(4, 3)
    state = LatentState(h=np.zeros(4), c=np.zeros(4), t=1, selected=(2,))
    with pytest.raises(ValueError, match="already selected"):
        step(state, np.ones(3), 2, params)


def test_value_estimate_formula():
    params = tiny_params(4, 3)
    h = np.array([1.0, -1.0, 0.5, 0.0])
    state = LatentState(h=h, c=np.zeros(4), t=0, selected=())
    expected = float(h @ params.w_v + params.b_v)
    assert value_estimate(state, params) == pytest.approx(expected, abs=1e-15)


# ---------------------------------------------------------------------------
# Policy distribution
# ---------------------------------------------------------------------------

def _uniform_state(d_h, selected=()):
    return LatentState(h=np.zeros(d_h), c=np.zeros(d_h), t=len(selected), selected=selected)


def test_policy_uniform_when_h_zero():
    params = tiny_params(d_h=4, d_e=3)
    emb = unit_rows(np.random.default_rng(0), 6, 3)
    dist = policy(_uniform_state(4), emb, params)
    assert np.allclose(dist.probs, np.full(6, 1 / 6), atol=1e-12)


def test_policy_masks_selected_exactly_zero():
    params = tiny_params(d_h=4, d_e=3)
    emb = unit_rows(np.random.default_rng(1), 6, 3)
    rng = np.random.default_rng(2)
    x = unit_rows(rng, 1, 3)[0]
    state = encode_problem(x, params)
    state = LatentState(h=state.h, c=state.c, t=2, selected=(1, 4))
    dist = policy(state, emb, params)
    assert dist.probs[1] == 0.0 and dist.probs[4] == 0.0
    assert dist.log_probs[1] == -np.inf and dist.log_probs[4] == -np.inf
    assert dist.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_policy_softmax_shift_invariance():
    # adding a constant to every activation (here: scaling h's effect via a
    # rank-one W_a perturbation that shifts all scores equally) leaves the
    # distribution unchanged
    params = tiny_params(d_h=4, d_e=3, seed=2)
    rng = np.random.default_rng(3)
    emb = unit_rows(rng, 5, 3)
    x = unit_rows(rng, 1, 3)[0]
    state = encode_problem(x, params)
    base = policy(state, emb, params)

    from reticl.retriever import _masked_softmax

    act = emb @ (params.W_a.T @ state.h)
    p1, lp1, _ = _masked_softmax(act, (2,), 5)
    p2, lp2, _ = _masked_softmax(act + 123.456, (2,), 5)
    assert np.allclose(p1, p2, atol=1e-9)
    finite = np.isfinite(lp1)
    assert np.allclose(lp1[finite], lp2[finite], atol=1e-9)
    assert base.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_policy_all_masked_raises():
    params = tiny_params(d_h=4, d_e=3)
    emb = unit_rows(np.random.default_rng(0), 2, 3)
    state = _uniform_state(4, selected=(0, 1))
    with pytest.raises(ValueError):
        policy(state, emb, params)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 12), n_sel=st.integers(0, 2))
def test_policy_probability_simplex_property(seed, n, n_sel):
    rng = np.random.default_rng(seed)
    params = init_parameters(5, 4, seed % 17)
    emb = unit_rows(rng, n, 4)
    selected = tuple(rng.choice(n, size=n_sel, replace=False).tolist())
    x = unit_rows(rng, 1, 4)[0]
    h = encode_problem(x, params).h
    dist = policy(LatentState(h=h, c=np.zeros(5), t=n_sel, selected=selected), emb, params)
    assert dist.probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert (dist.probs >= 0).all()
    for i in selected:
        assert dist.probs[i] == 0.0


# ---------------------------------------------------------------------------
# Action selection
# ---------------------------------------------------------------------------

def test_greedy_action_tie_breaks_lowest_index():
    dist = retriever.PolicyDistribution(
        probs=np.array([0.2, 0.3, 0.3, 0.2]), log_probs=np.log([0.2, 0.3, 0.3, 0.2]),
        activations=np.zeros(4), selected=(),
    )
    assert greedy_action(dist) == 1


def test_sample_action_matches_distribution():
    probs = np.array([0.5, 0.0, 0.3, 0.2])
    dist = retriever.PolicyDistribution(
        probs=probs, log_probs=np.where(probs > 0, np.log(np.maximum(probs, 1e-300)), -np.inf),
        activations=np.zeros(4), selected=(1,),
    )
    rng = np.random.default_rng(0)
    draws = np.array([sample_action(dist, rng) for _ in range(20_000)])
    freq = np.bincount(draws, minlength=4) / len(draws)
    assert freq[1] == 0.0  # masked action never drawn
    assert np.allclose(freq, probs, atol=0.02)


def test_sample_action_deterministic_per_generator_state():
    probs = np.full(5, 0.2)
    dist = retriever.PolicyDistribution(probs=probs, log_probs=np.log(probs),
                                        activations=np.zeros(5), selected=())
    a = [sample_action(dist, np.random.default_rng(9)) for _ in range(1)]
    b = [sample_action(dist, np.random.default_rng(9)) for _ in range(1)]
    assert a == b


# ---------------------------------------------------------------------------
# Episode replay
# ---------------------------------------------------------------------------

def test_episode_forward_matches_step_by_step():
    rng = np.random.default_rng(4)
    params = tiny_params(d_h=5, d_e=4, seed=1)
    emb = unit_rows(rng, 6, 4)
    x = unit_rows(rng, 1, 4)[0]
    actions = (3, 0, 5)

    cache = episode_forward(params, x, actions, emb)

    state = encode_problem(x, params)
    for t, a in enumerate(actions):
        assert np.allclose(cache.h[t], state.h, atol=1e-12)
        assert cache.values[t] == pytest.approx(value_estimate(state, params), abs=1e-12)
        dist = policy(state, emb, params)
        assert cache.log_prob_chosen[t] == pytest.approx(dist.log_probs[a], abs=1e-12)
        finite = np.isfinite(dist.log_probs)
        entropy = -float(dist.probs[finite] @ dist.log_probs[finite])
        assert cache.entropies[t] == pytest.approx(entropy, abs=1e-12)
        if t + 1 < len(actions):
            state = step(state, emb[a], a, params)


def test_episode_forward_rejects_duplicate_actions():
    params = tiny_params(4, 3)
    emb = unit_rows(np.random.default_rng(0), 4, 3)
    with pytest.raises(ValueError, match="distinct"):
        episode_forward(params, emb[0], (1, 1), emb)


def test_episode_forward_lstm_off_pins_initial_state():
    rng = np.random.default_rng(6)
    params = tiny_params(d_h=5, d_e=4, seed=2)
    emb = unit_rows(rng, 6, 4)
    x = unit_rows(rng, 1, 4)[0]
    cache = episode_forward(params, x, (2, 4, 0), emb, lstm_off=True)
    h0 = encode_problem(x, params).h
    for h in cache.h:
        assert np.array_equal(h, h0)
    assert cache.lstm == []  # no transitions recorded
