import numpy as np
import pytest

from reticl import retriever
from reticl.corpus import Corpus, Example
from reticl.trainer import TrainConfig, loss_and_gradients, rollout

DATA_DIR = __file__.rsplit("/", 1)[0] + "/data"


@pytest.fixture
def data_dir():
    return DATA_DIR


def unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def make_corpus(rng, n, d, prefix="ex"):
    rows = unit_rows(rng, n, d)
    return Corpus.from_examples(
        Example(
            id=f"{prefix}-{i}",
            problem_text=f"problem {i}",
            solution_text=f"solution {i}. Final Answer: {i}",
            final_answer=str(i),
            embedding=rows[i],
        )
        for i in range(n)
    )


def tiny_params(d_h=6, d_e=5, seed=3):
    return retriever.init_parameters(d_h, d_e, seed)


class QuadraticEnv:
    """Deterministic offline environment for trainer plumbing tests.

    Reward depends only on which actions were taken, so gradients and logs
    are reproducible without any model in the loop.
    """

    def episode(self, problem, selected_examples):
        from reticl.environment import RewardBreakdown

        idx = [int(ex.id.rsplit("-", 1)[1]) for ex in selected_examples]
        goal = 1.0 if (sum(idx) % 2 == 0) else -1.0
        confidence = 1.0 - 2.0 * (idx[0] % 3) / 3.0
        terminal = 0.5 * goal + 0.5 * confidence
        return (
            RewardBreakdown(goal=goal, confidence=confidence, terminal=terminal,
                            correct=goal > 0),
            "stub generation. Final Answer: 0",
        )

    def episode_batch(self, pairs):
        return [self.episode(p, e) for p, e in pairs]


def finite_difference_check(params, trajectories, corpus, config, step=1e-4):
    """Max relative error of the analytic gradient vs central differences.

    The comparison runs tensor-by-tensor on the full total loss; relative
    error uses max(|analytic|, |numeric|, 1e-8) as the scale.
    """
    _, grads = loss_and_gradients(trajectories, params, corpus, config)

    def loss_at(p):
        losses, _ = loss_and_gradients(trajectories, p, corpus, config)
        return losses["total"]

    worst = 0.0
    tensors = params.tensors()
    for name, value in tensors.items():
        flat = np.asarray(value, dtype=np.float64).reshape(-1)
        g_flat = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]

            def perturbed(v):
                t = {k: np.array(a, dtype=np.float64) for k, a in tensors.items()}
                t[name] = t[name].reshape(-1).copy()
                t[name][i] = v
                t[name] = t[name].reshape(np.shape(value))
                return retriever.PolicyParameters.from_tensors(t)

            up = loss_at(perturbed(orig + step))
            down = loss_at(perturbed(orig - step))
            numeric = (up - down) / (2 * step)
            scale = max(abs(numeric), abs(g_flat[i]), 1e-8)
            worst = max(worst, abs(numeric - g_flat[i]) / scale)
    return worst


def sample_trajectories(seed=0, n_corpus=5, d_e=6, d_h=8, horizon=2, n_traj=3):
    """Roll out a few episodes against the quadratic stub environment."""
    rng = np.random.default_rng(seed)
    corpus = make_corpus(rng, n_corpus, d_e)
    problems = [
        Example(id=f"p-{i}", problem_text=f"q {i}", solution_text="s. Final Answer: 1",
                final_answer="1", embedding=unit_rows(rng, 1, d_e)[0])
        for i in range(n_traj)
    ]
    config = TrainConfig(
        horizon=horizon, hidden_size=d_h, train_corpus_size=n_corpus,
        train_problem_count=n_traj, validation_size=1, batch_size=n_traj,
        epochs=1, seed=seed,
    )
    params = retriever.init_parameters(d_h, d_e, seed)
    trajectories = rollout(params, problems, corpus, QuadraticEnv(), "sample",
                           np.random.default_rng(seed + 1), config)
    return params, trajectories, corpus, config
