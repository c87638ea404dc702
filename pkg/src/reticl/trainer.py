"""PPO training loop: rollouts, GAE, clipped surrogate, AdamW, validation.

One gradient update is made per collected batch by default
(``inner_update_epochs=1``), in which case all probability ratios are 1 at
loss time; the clip becomes active only when batches are reused.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import retriever, tensorio
from .corpus import subsample_corpus
from .rng import child_rng


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    horizon: int = 2  # number of in-context examples T
    gamma: float = 1.0
    gae_lambda: float = 0.9
    eps_clip: float = 0.1
    c_vf: float = 0.5
    c_entropy: float = 0.1  # 0.05 for tabmwp, 0.1 for gsm8k
    learning_rate: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 20
    epochs: int = 50
    grad_clip_norm: float = 2.0
    train_problem_count: int = 5000
    train_corpus_size: int = 200
    validation_size: int = 500
    inner_update_epochs: int = 1
    advantage_normalization: bool = True
    hidden_size: int = 800
    seed: int = 0
    confidence_reward_off: bool = False
    lstm_off: bool = False
    entropy_off: bool = False

    def __post_init__(self):
        if not 0.0 < self.eps_clip < 1.0:
            raise ValueError(f"eps_clip must be in (0, 1), got {self.eps_clip}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        for name in ("horizon", "batch_size", "epochs", "train_problem_count",
                     "train_corpus_size", "validation_size", "inner_update_epochs",
                     "hidden_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.horizon > self.train_corpus_size:
            raise ValueError("horizon cannot exceed the training corpus size")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class Trajectory:
    problem_id: str
    actions: tuple  # T distinct corpus indices, in selection order
    old_log_probs: np.ndarray  # log pi at selection time
    values: np.ndarray  # v(S_t) for the pre-action states
    reward: "RewardBreakdown"
    generated_text: str
    problem_embedding: np.ndarray

    def to_json(self):
        return {
            "problem_id": self.problem_id,
            "actions": list(self.actions),
            "old_log_probs": [float(x) for x in self.old_log_probs],
            "values": [float(x) for x in self.values],
            "reward": dataclasses.asdict(self.reward),
            "generated_text": self.generated_text,
        }

    @classmethod
    def from_json(cls, record, problem_embedding):
        from .environment import RewardBreakdown

        return cls(
            problem_id=record["problem_id"],
            actions=tuple(record["actions"]),
            old_log_probs=np.array(record["old_log_probs"]),
            values=np.array(record["values"]),
            reward=RewardBreakdown(**record["reward"]),
            generated_text=record["generated_text"],
            problem_embedding=problem_embedding,
        )


def effective_terminal_reward(reward, config):
    """Terminal reward honoring the confidence-reward ablation."""
    return reward.goal if config.confidence_reward_off else reward.terminal


# ---------------------------------------------------------------------------
# Advantages
# ---------------------------------------------------------------------------

def gae_advantages(rewards, values, gamma, lam):
    """Generalized advantage estimation with terminal value 0.

    delta_t = r_t + gamma*v_{t+1} - v_t;  A_t = delta_t + gamma*lam*A_{t+1}.
    Returns (advantages, returns) where returns_t = A_t + v_t.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError(f"rewards shape {rewards.shape} != values shape {values.shape}")
    horizon = len(rewards)
    next_values = np.append(values[1:], 0.0)
    deltas = rewards + gamma * next_values - values
    advantages = np.zeros(horizon)
    acc = 0.0
    for t in reversed(range(horizon)):
        acc = deltas[t] + gamma * lam * acc
        advantages[t] = acc
    return advantages, advantages + values


def _batch_advantages(trajectories, config):
    """Per-trajectory GAE from recorded values, optionally batch-standardized."""
    advantages = []
    for traj in trajectories:
        rewards = np.zeros(len(traj.actions))
        rewards[-1] = effective_terminal_reward(traj.reward, config)
        adv, _ = gae_advantages(rewards, traj.values, config.gamma, config.gae_lambda)
        advantages.append(adv)
    if config.advantage_normalization:
        flat = np.concatenate(advantages)
        mean, std = flat.mean(), max(flat.std(), 1e-8)
        advantages = [(a - mean) / std for a in advantages]
    return advantages


# ---------------------------------------------------------------------------
# Losses and gradients
# ---------------------------------------------------------------------------

def _caches(trajectories, params, emb_matrix, config):
    return [
        retriever.episode_forward(
            params, traj.problem_embedding, traj.actions, emb_matrix, lstm_off=config.lstm_off
        )
        for traj in trajectories
    ]


def _emb(corpus):
    return np.asarray(
        corpus if isinstance(corpus, np.ndarray) else corpus.embedding_matrix,
        dtype=np.float64,
    )


def _ppo_terms(ratio, adv, eps_clip):
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps_clip, 1.0 + eps_clip) * adv
    return -np.minimum(surr1, surr2), surr1, surr2


def ppo_loss(trajectories, params, corpus, config):
    """Clipped-surrogate policy loss averaged over all steps in the batch."""
    emb = _emb(corpus)
    advantages = _batch_advantages(trajectories, config)
    total, count = 0.0, 0
    for traj, adv in zip(trajectories, advantages):
        cache = retriever.episode_forward(
            params, traj.problem_embedding, traj.actions, emb, lstm_off=config.lstm_off
        )
        ratio = np.exp(cache.log_prob_chosen - traj.old_log_probs)
        if not np.all(np.isfinite(ratio)):
            raise TrainingError(f"non-finite PPO ratio for problem {traj.problem_id}")
        terms, _, _ = _ppo_terms(ratio, adv, config.eps_clip)
        total += terms.sum()
        count += len(terms)
    return total / count


def value_loss(trajectories, params, corpus, config):
    """MSE of the value head against the terminal reward at every step."""
    emb = _emb(corpus)
    total, count = 0.0, 0
    for traj in trajectories:
        cache = retriever.episode_forward(
            params, traj.problem_embedding, traj.actions, emb, lstm_off=config.lstm_off
        )
        target = effective_terminal_reward(traj.reward, config)
        total += ((cache.values - target) ** 2).sum()
        count += len(cache.values)
    return total / count


def entropy_loss(trajectories, params, corpus, config, corpus_size=None):
    """Negative policy entropy normalized by log(|corpus|), batch-averaged."""
    emb = _emb(corpus)
    n = corpus_size if corpus_size is not None else emb.shape[0]
    if n < 2:
        raise ValueError("entropy normalization needs a corpus of at least 2")
    total, count = 0.0, 0
    for traj in trajectories:
        cache = retriever.episode_forward(
            params, traj.problem_embedding, traj.actions, emb, lstm_off=config.lstm_off
        )
        total += (-cache.entropies / math.log(n)).sum()
        count += len(cache.entropies)
    return total / count


def loss_and_gradients(trajectories, params, corpus, config):
    """Total loss and its exact gradient with respect to every parameter.

    Advantages and value-loss targets are treated as constants of the
    recorded rollout; gradients flow through the recomputed log-probs,
    entropies, and value estimates only.
    """
    emb = _emb(corpus)
    n_corpus = emb.shape[0]
    log_n = math.log(n_corpus)
    c_e = 0.0 if config.entropy_off else config.c_entropy
    advantages = _batch_advantages(trajectories, config)
    caches = _caches(trajectories, params, emb, config)
    n_steps = sum(len(t.actions) for t in trajectories)

    grads = params.zero_grads()
    ppo_total = value_total = entropy_total = 0.0
    for traj, adv, cache in zip(trajectories, advantages, caches):
        ratio = np.exp(cache.log_prob_chosen - traj.old_log_probs)
        if not np.all(np.isfinite(ratio)):
            raise TrainingError(f"non-finite PPO ratio for problem {traj.problem_id}")
        terms, surr1, surr2 = _ppo_terms(ratio, adv, config.eps_clip)
        ppo_total += terms.sum()
        unclipped = np.abs(ratio - 1.0) < config.eps_clip
        d_ratio = np.where(surr1 <= surr2, adv, np.where(unclipped, adv, 0.0))
        g_lp = -d_ratio * ratio / n_steps

        target = effective_terminal_reward(traj.reward, config)
        value_total += ((cache.values - target) ** 2).sum()
        g_v = config.c_vf * 2.0 * (cache.values - target) / n_steps

        entropy_total += (-cache.entropies / log_n).sum()
        g_h = np.full(len(traj.actions), -c_e / (log_n * n_steps))

        retriever.episode_backward(cache, params, emb, g_lp, g_v, g_h, grads)

    losses = {
        "ppo": ppo_total / n_steps,
        "value": value_total / n_steps,
        "entropy": entropy_total / n_steps,
    }
    losses["total"] = losses["ppo"] + config.c_vf * losses["value"] + c_e * losses["entropy"]
    if not math.isfinite(losses["total"]):
        raise TrainingError(f"non-finite loss: {losses}")
    return losses, grads


# gradient-of-total-loss entry point; the finite-difference tests pin it down
gradient = loss_and_gradients


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """Decoupled-weight-decay Adam with global gradient norm clipping.

    Moment coefficients 0.9/0.999 and stabilizer 1e-8; weight decay applies
    to weight tensors only, never biases. Deterministic.
    """

    def __init__(self, learning_rate, weight_decay, grad_clip_norm,
                 betas=(0.9, 0.999), eps=1e-8):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.grad_clip_norm = grad_clip_norm
        self.betas = betas
        self.eps = eps
        self.m = {}
        self.v = {}
        self.step_count = 0

    def step(self, params, grads):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in {name}")
        global_norm = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
        scale = 1.0
        if self.grad_clip_norm and global_norm > self.grad_clip_norm:
            scale = self.grad_clip_norm / global_norm

        self.step_count += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.step_count
        bias2 = 1.0 - b2**self.step_count
        tensors = params.tensors()
        out = {}
        for name, value in tensors.items():
            g = grads[name] * scale
            m = self.m.get(name, np.zeros_like(value))
            v = self.v.get(name, np.zeros_like(value))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g**2
            self.m[name], self.v[name] = m, v
            update = self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            new = np.array(value, dtype=np.float64)
            if name in retriever.PolicyParameters.WEIGHT_NAMES:
                new = new - self.learning_rate * self.weight_decay * new
            out[name] = new - update
        new_params = retriever.PolicyParameters.from_tensors(out)
        if not new_params.all_finite():
            raise TrainingError("parameters became non-finite after update")
        return new_params


def optimizer_step(params, gradients, config, optimizer=None):
    """Single AdamW step; pass the same ``optimizer`` across calls to keep
    moment state."""
    if optimizer is None:
        optimizer = AdamW(config.learning_rate, config.weight_decay, config.grad_clip_norm)
    return optimizer.step(params, gradients), optimizer


# ---------------------------------------------------------------------------
# Rollout
# ---------------------------------------------------------------------------

def rollout(params, problems, corpus, env, mode, rng, config):
    """Run one episode per problem; sample or greedy selection."""
    if not problems:
        raise ValueError("rollout needs a non-empty problem batch")
    if len(corpus) < config.horizon:
        raise ValueError("corpus smaller than the episode horizon")
    emb = _emb(corpus)
    selections = []
    for problem in problems:
        state = retriever.encode_problem(problem.embedding, params)
        h0 = state
        actions, log_probs, values = [], [], []
        for t in range(config.horizon):
            used = retriever.LatentState(
                h=h0.h if config.lstm_off else state.h,
                c=state.c, t=t, selected=tuple(actions),
            )
            values.append(retriever.value_estimate(used, params))
            dist = retriever.policy(used, emb, params)
            if mode == "sample":
                action = retriever.sample_action(dist, rng)
            elif mode == "greedy":
                action = retriever.greedy_action(dist)
            else:
                raise ValueError(f"unknown rollout mode {mode!r}")
            log_probs.append(float(dist.log_probs[action]))
            if t + 1 < config.horizon:
                state = retriever.step(state, emb[action], action, params)
            actions.append(action)
        selections.append((problem, actions, log_probs, values))

    pairs = [
        (problem, [corpus.examples[a] for a in actions])
        for problem, actions, _, _ in selections
    ]
    try:
        outcomes = env.episode_batch(pairs)
    except Exception as err:
        raise TrainingError(f"environment failure during rollout: {err}") from err

    trajectories = []
    for (problem, actions, log_probs, values), (reward, text) in zip(selections, outcomes):
        trajectories.append(
            Trajectory(
                problem_id=problem.id,
                actions=tuple(actions),
                old_log_probs=np.array(log_probs),
                values=np.array(values),
                reward=reward,
                generated_text=text,
                problem_embedding=np.asarray(problem.embedding, dtype=np.float64),
            )
        )
    return trajectories


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    metrics: list
    params: "retriever.PolicyParameters"
    best_val_accuracy: float


def save_params(path, params, config):
    tensorio.save_checkpoint(path, params.tensors(), {"train_config": config.to_dict()})


def load_params(path):
    tensors, meta = tensorio.load_checkpoint(path)
    params = retriever.PolicyParameters.from_tensors(tensors)
    config = TrainConfig.from_dict(meta["train_config"])
    return params, config


def _validation_pass(params, problems, corpus, env, config):
    """Greedy selection on the validation split; returns summary metrics."""
    accuracy_count = 0
    reward_total = 0.0
    selected_ids = set()
    for start in range(0, len(problems), config.batch_size):
        batch = problems[start : start + config.batch_size]
        trajectories = rollout(params, batch, corpus, env, "greedy", None, config)
        for traj in trajectories:
            accuracy_count += int(traj.reward.correct)
            reward_total += effective_terminal_reward(traj.reward, config)
            selected_ids.update(corpus.examples[a].id for a in traj.actions)
    return {
        "val_accuracy": accuracy_count / len(problems),
        "mean_reward": reward_total / len(problems),
        "unique_examples": len(selected_ids),
    }


def _load_episode_log(path):
    logged = {}
    if not Path(path).exists():
        return logged
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            logged.setdefault((record["epoch"], record["batch"]), []).append(record["trajectory"])
    return logged


def train(config, data, env, run_dir):
    """Full training loop with per-epoch greedy validation and checkpointing.

    Writes ``metrics.jsonl`` (one record per epoch), ``episodes.jsonl``
    (append-only trajectory log used to resume an interrupted run without
    repeating environment calls), and best/last checkpoints under
    ``run_dir``.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / "metrics.jsonl"
    episodes_path = run_dir / "episodes.jsonl"
    best_path = run_dir / "checkpoint_best.rtck"
    last_path = run_dir / "checkpoint_last.rtck"

    train_problems = list(data.train_problems)
    problems_by_id = {p.id: p for p in train_problems}
    d_e = data.train_corpus.dim
    params = retriever.init_parameters(config.hidden_size, d_e, config.seed)
    optimizer = AdamW(config.learning_rate, config.weight_decay, config.grad_clip_norm)

    logged = _load_episode_log(episodes_path)
    resuming = bool(logged)
    metrics = []
    best_accuracy = -np.inf

    with open(metrics_path, "w") as metrics_file, open(episodes_path, "a") as episode_file:
        for epoch in range(config.epochs):
            order = child_rng(config.seed, "shuffle", epoch).permutation(len(train_problems))
            epoch_losses = []
            n_batches = math.ceil(len(train_problems) / config.batch_size)
            for b in range(n_batches):
                idx = order[b * config.batch_size : (b + 1) * config.batch_size]
                batch = [train_problems[i] for i in idx]
                key = (epoch, b)
                if resuming and key in logged:
                    trajectories = [
                        Trajectory.from_json(
                            rec, np.asarray(problems_by_id[rec["problem_id"]].embedding,
                                            dtype=np.float64)
                        )
                        for rec in logged[key]
                    ]
                else:
                    rng = child_rng(config.seed, "rollout", epoch, b)
                    trajectories = rollout(
                        params, batch, data.train_corpus, env, "sample", rng, config
                    )
                    for traj in trajectories:
                        episode_file.write(json.dumps(
                            {"epoch": epoch, "batch": b, "trajectory": traj.to_json()}
                        ) + "\n")
                    episode_file.flush()
                for _ in range(config.inner_update_epochs):
                    losses, grads = loss_and_gradients(
                        trajectories, params, data.train_corpus, config
                    )
                    params = optimizer.step(params, grads)
                epoch_losses.append(losses)

            summary = _validation_pass(
                params, list(data.validation_problems), data.inference_corpus, env, config
            )
            record = {
                "epoch": epoch,
                **summary,
                "losses": {
                    k: float(np.mean([l[k] for l in epoch_losses]))
                    for k in ("total", "ppo", "value", "entropy")
                },
            }
            metrics.append(record)
            metrics_file.write(json.dumps(record) + "\n")
            metrics_file.flush()

            save_params(last_path, params, config)
            if summary["val_accuracy"] > best_accuracy:
                best_accuracy = summary["val_accuracy"]
                save_params(best_path, params, config)

    return TrainResult(
        best_checkpoint=best_path, last_checkpoint=last_path,
        metrics=metrics, params=params, best_val_accuracy=float(best_accuracy),
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    mean_reward: float
    records: list = field(repr=False)
    coverage: float = 1.0


def evaluate(params, problems, corpus, env, config, corpus_fraction=1.0, seed=0):
    """Greedy selection over a (possibly subsampled) corpus.

    Per-problem environment failures are recorded and skipped; ``coverage``
    reports the evaluated fraction.
    """
    if not 0.0 < corpus_fraction <= 1.0:
        raise ValueError(f"corpus_fraction must be in (0, 1], got {corpus_fraction}")
    eval_corpus = subsample_corpus(corpus, corpus_fraction, seed, min_size=config.horizon)
    records = []
    correct = 0
    reward_total = 0.0
    evaluated = 0
    for start in range(0, len(problems), config.batch_size):
        batch = list(problems[start : start + config.batch_size])
        try:
            trajectories = rollout(params, batch, eval_corpus, env, "greedy", None, config)
        except TrainingError as err:
            for problem in batch:
                records.append({"problem_id": problem.id, "error": str(err)})
            continue
        for traj in trajectories:
            evaluated += 1
            correct += int(traj.reward.correct)
            reward_total += effective_terminal_reward(traj.reward, config)
            records.append({
                "problem_id": traj.problem_id,
                "selected_ids": [eval_corpus.examples[a].id for a in traj.actions],
                "correct": traj.reward.correct,
                "reward": dataclasses.asdict(traj.reward),
                "generated_text": traj.generated_text,
            })
    if evaluated == 0:
        raise TrainingError("no problems could be evaluated")
    return EvalReport(
        accuracy=correct / evaluated,
        mean_reward=reward_total / evaluated,
        records=records,
        coverage=evaluated / len(problems),
    )
