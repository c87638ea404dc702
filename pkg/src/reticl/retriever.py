"""Policy/value network for sequential example selection.

The latent state starts from a tanh projection of the problem embedding and
is advanced by a single-layer LSTM cell fed with the embeddings of the chosen
examples. Each state produces a scalar value estimate (affine head) and a
policy over the corpus via a bilinear activation h^T W_a e, masked so that
already-selected examples have probability exactly zero.

Gradients are computed by hand-rolled reverse mode (`episode_forward` /
`episode_backward`); the contract is exact agreement with central finite
differences, which the test suite enforces for every parameter tensor.
"""

from dataclasses import dataclass

import numpy as np

from .rng import child_rng

DEFAULT_HIDDEN_SIZE = 800


@dataclass
class PolicyParameters:
    W_c: np.ndarray  # (d_h, d_e)
    b_c: np.ndarray  # (d_h,)
    W_ih: np.ndarray  # (4*d_h, d_e), gate order [input, forget, cell, output]
    W_hh: np.ndarray  # (4*d_h, d_h)
    b_ih: np.ndarray  # (4*d_h,)
    b_hh: np.ndarray  # (4*d_h,)
    w_v: np.ndarray  # (d_h,)
    b_v: float
    W_a: np.ndarray  # (d_h, d_e)

    WEIGHT_NAMES = ("W_c", "W_ih", "W_hh", "w_v", "W_a")
    BIAS_NAMES = ("b_c", "b_ih", "b_hh", "b_v")

    @property
    def d_h(self):
        return self.W_c.shape[0]

    @property
    def d_e(self):
        return self.W_c.shape[1]

    def tensors(self):
        return {
            "W_c": self.W_c,
            "b_c": self.b_c,
            "W_ih": self.W_ih,
            "W_hh": self.W_hh,
            "b_ih": self.b_ih,
            "b_hh": self.b_hh,
            "w_v": self.w_v,
            "b_v": np.asarray(self.b_v, dtype=np.float64).reshape(()),
            "W_a": self.W_a,
        }

    @classmethod
    def from_tensors(cls, tensors):
        t = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
        return cls(
            W_c=t["W_c"], b_c=t["b_c"], W_ih=t["W_ih"], W_hh=t["W_hh"],
            b_ih=t["b_ih"], b_hh=t["b_hh"], w_v=t["w_v"], b_v=float(t["b_v"]),
            W_a=t["W_a"],
        )

    def zero_grads(self):
        return {name: np.zeros_like(arr) for name, arr in self.tensors().items()}

    def all_finite(self):
        return all(np.all(np.isfinite(arr)) for arr in self.tensors().values())

    def copy(self):
        return PolicyParameters.from_tensors({k: v.copy() for k, v in self.tensors().items()})


@dataclass(frozen=True)
class LatentState:
    h: np.ndarray
    c: np.ndarray
    t: int
    selected: tuple


@dataclass(frozen=True)
class PolicyDistribution:
    probs: np.ndarray
    log_probs: np.ndarray
    activations: np.ndarray
    selected: tuple


def _orthogonal(rng, m, n):
    """Random matrix whose Gram matrix over the smaller dimension is I."""
    a = rng.standard_normal((max(m, n), min(m, n)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if m >= n else q.T


def init_parameters(d_h, d_e, seed):
    """Orthogonal weight matrices, zero biases, deterministic per seed."""
    if d_h <= 0 or d_e <= 0:
        raise ValueError(f"dimensions must be positive, got d_h={d_h}, d_e={d_e}")
    rng = child_rng(seed, "init")
    return PolicyParameters(
        W_c=_orthogonal(rng, d_h, d_e),
        b_c=np.zeros(d_h),
        W_ih=_orthogonal(rng, 4 * d_h, d_e),
        W_hh=_orthogonal(rng, 4 * d_h, d_h),
        b_ih=np.zeros(4 * d_h),
        b_hh=np.zeros(4 * d_h),
        w_v=_orthogonal(rng, 1, d_h)[0],
        b_v=0.0,
        W_a=_orthogonal(rng, d_h, d_e),
    )


# ---------------------------------------------------------------------------
# Forward ops
# ---------------------------------------------------------------------------

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def encode_problem(x_embedding, params):
    """Initial latent state h_0 = tanh(W_c x + b_c), zero cell state."""
    x = np.asarray(x_embedding, dtype=np.float64)
    if x.shape != (params.d_e,):
        raise ValueError(f"problem embedding has shape {x.shape}, expected ({params.d_e},)")
    if abs(np.linalg.norm(x) - 1.0) > 1e-5:
        raise ValueError("problem embedding must be unit-norm")
    h = np.tanh(params.W_c @ x + params.b_c)
    return LatentState(h=h, c=np.zeros(params.d_h), t=0, selected=())


def _lstm_gates(params, e, h):
    z = params.W_ih @ e + params.b_ih + params.W_hh @ h + params.b_hh
    d_h = params.d_h
    i = _sigmoid(z[:d_h])
    f = _sigmoid(z[d_h : 2 * d_h])
    g = np.tanh(z[2 * d_h : 3 * d_h])
    o = _sigmoid(z[3 * d_h :])
    return i, f, g, o


def step(state, e_embedding, chosen_index, params):
    """Advance the latent state with the embedding of the chosen example."""
    if chosen_index in state.selected:
        raise ValueError(f"example {chosen_index} was already selected")
    e = np.asarray(e_embedding, dtype=np.float64)
    i, f, g, o = _lstm_gates(params, e, state.h)
    c_new = f * state.c + i * g
    h_new = o * np.tanh(c_new)
    return LatentState(
        h=h_new, c=c_new, t=state.t + 1, selected=state.selected + (chosen_index,)
    )


def value_estimate(state, params):
    """v(S_t) = h_t . w_v + b_v."""
    return float(state.h @ params.w_v + params.b_v)


def _masked_softmax(activations, selected, n):
    """Log-softmax over unmasked activations; masked entries get prob 0."""
    mask = np.zeros(n, dtype=bool)
    if selected:
        mask[list(selected)] = True
    unmasked = ~mask
    if not unmasked.any():
        raise ValueError("all corpus entries are masked")
    z = activations[unmasked]
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    log_probs = np.full(n, -np.inf)
    log_probs[unmasked] = z - lse
    probs = np.zeros(n)
    probs[unmasked] = np.exp(log_probs[unmasked])
    full_act = np.where(unmasked, activations, -np.inf)
    return probs, log_probs, full_act


def _embedding_matrix(corpus):
    return corpus if isinstance(corpus, np.ndarray) else corpus.embedding_matrix


def policy(state, corpus, params):
    """Masked softmax distribution over the corpus from the current state."""
    emb = np.asarray(_embedding_matrix(corpus), dtype=np.float64)
    if len(state.selected) >= emb.shape[0]:
        raise ValueError("no unselected corpus entries remain")
    activations = emb @ (params.W_a.T @ state.h)
    probs, log_probs, full_act = _masked_softmax(activations, state.selected, emb.shape[0])
    return PolicyDistribution(
        probs=probs, log_probs=log_probs, activations=full_act, selected=state.selected
    )


def sample_action(dist, rng):
    """Draw a corpus index from the policy (seeded generator)."""
    cdf = np.cumsum(dist.probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(dist.probs) - 1)


def greedy_action(dist):
    """Argmax of the policy; ties break to the lowest index."""
    return int(np.argmax(dist.probs))


# ---------------------------------------------------------------------------
# Episode forward/backward (exact gradients)
# ---------------------------------------------------------------------------

@dataclass
class EpisodeCache:
    """Everything the backward pass needs from one episode's forward replay."""

    x_emb: np.ndarray
    actions: tuple
    lstm_off: bool
    h: list  # h_0..h_{T-1} (states at which value/policy heads fire)
    values: np.ndarray  # (T,)
    log_prob_chosen: np.ndarray  # (T,)
    entropies: np.ndarray  # (T,)
    unmasked: list  # per step, bool mask of shape (|C|,)
    pi: list  # per step, probs over unmasked entries
    log_pi: list  # per step, log probs over unmasked entries
    chosen_pos: list  # per step, position of the action within the unmasked subset
    lstm: list  # per transition, dict with e, h_prev, c_prev, i, f, g, o, c_new


def episode_forward(params, x_emb, actions, emb_matrix, lstm_off=False):
    """Replay an episode's states for the recorded action sequence."""
    emb_matrix = np.asarray(emb_matrix, dtype=np.float64)
    actions = tuple(int(a) for a in actions)
    if len(set(actions)) != len(actions):
        raise ValueError("episode actions must be distinct")
    n = emb_matrix.shape[0]
    horizon = len(actions)

    x = np.asarray(x_emb, dtype=np.float64)
    h = np.tanh(params.W_c @ x + params.b_c)
    c = np.zeros(params.d_h)
    cache = EpisodeCache(
        x_emb=x, actions=actions, lstm_off=lstm_off, h=[], values=np.zeros(horizon),
        log_prob_chosen=np.zeros(horizon), entropies=np.zeros(horizon),
        unmasked=[], pi=[], log_pi=[], chosen_pos=[], lstm=[],
    )
    h0 = h
    for t in range(horizon):
        state_h = h0 if lstm_off else h
        cache.h.append(state_h)
        cache.values[t] = state_h @ params.w_v + params.b_v

        mask = np.zeros(n, dtype=bool)
        if t:
            mask[list(actions[:t])] = True
        unmasked = ~mask
        z = emb_matrix[unmasked] @ (params.W_a.T @ state_h)
        m = z.max()
        lse = m + np.log(np.exp(z - m).sum())
        log_pi = z - lse
        pi = np.exp(log_pi)
        pos = int(np.searchsorted(np.flatnonzero(unmasked), actions[t]))
        cache.unmasked.append(unmasked)
        cache.pi.append(pi)
        cache.log_pi.append(log_pi)
        cache.chosen_pos.append(pos)
        cache.log_prob_chosen[t] = log_pi[pos]
        cache.entropies[t] = -float(pi @ log_pi)

        if t + 1 < horizon and not lstm_off:
            e = emb_matrix[actions[t]]
            i, f, g, o = _lstm_gates(params, e, h)
            c_new = f * c + i * g
            cache.lstm.append(
                {"e": e, "h_prev": h, "c_prev": c, "i": i, "f": f, "g": g, "o": o, "c_new": c_new}
            )
            c = c_new
            h = o * np.tanh(c_new)
    return cache


def episode_backward(cache, params, emb_matrix, g_log_prob, g_value, g_entropy, grads):
    """Accumulate d(loss)/d(params) for one episode into ``grads``.

    ``g_log_prob``, ``g_value`` and ``g_entropy`` are the upstream gradients
    of the loss with respect to the per-step chosen log-probability, value
    estimate, and policy entropy.
    """
    emb_matrix = np.asarray(emb_matrix, dtype=np.float64)
    horizon = len(cache.actions)
    gh = [np.zeros(params.d_h) for _ in range(horizon)]

    for t in range(horizon):
        pi, log_pi = cache.pi[t], cache.log_pi[t]
        unmasked = cache.unmasked[t]
        g_phi = np.zeros(pi.shape[0])
        if g_log_prob[t]:
            g_phi -= g_log_prob[t] * pi
            g_phi[cache.chosen_pos[t]] += g_log_prob[t]
        if g_entropy[t]:
            g_phi -= g_entropy[t] * pi * (log_pi + cache.entropies[t])
        if g_phi.any():
            u = g_phi @ emb_matrix[unmasked]  # (d_e,)
            grads["W_a"] += np.outer(cache.h[t], u)
            gh[t] += params.W_a @ u
        if g_value[t]:
            grads["w_v"] += g_value[t] * cache.h[t]
            grads["b_v"] += g_value[t]
            gh[t] += g_value[t] * params.w_v

    if cache.lstm_off:
        gh0 = np.sum(gh, axis=0)
    else:
        d_h = params.d_h
        gc = np.zeros(d_h)
        for t in range(horizon - 1, 0, -1):
            tr = cache.lstm[t - 1]
            tc = np.tanh(tr["c_new"])
            gh_t = gh[t]
            go = gh_t * tc
            gc = gc + gh_t * tr["o"] * (1.0 - tc**2)
            gi = gc * tr["g"]
            gf = gc * tr["c_prev"]
            gg = gc * tr["i"]
            gc_prev = gc * tr["f"]
            dz = np.concatenate([
                gi * tr["i"] * (1.0 - tr["i"]),
                gf * tr["f"] * (1.0 - tr["f"]),
                gg * (1.0 - tr["g"] ** 2),
                go * tr["o"] * (1.0 - tr["o"]),
            ])
            grads["W_ih"] += np.outer(dz, tr["e"])
            grads["b_ih"] += dz
            grads["W_hh"] += np.outer(dz, tr["h_prev"])
            grads["b_hh"] += dz
            gh[t - 1] = gh[t - 1] + params.W_hh.T @ dz
            gc = gc_prev
        gh0 = gh[0]

    ga = gh0 * (1.0 - cache.h[0] ** 2)
    grads["W_c"] += np.outer(ga, cache.x_emb)
    grads["b_c"] += ga
    return grads
