"""LLM-free synthetic environment for training and testing.

Each corpus example carries a hidden category and a quality score; each
problem requires a set of categories (up to the episode horizon). An episode
is "correct" iff the selected examples' categories cover the required set,
and the confidence component is the mean quality of the selected examples
mapped to [-1, 1]. Because most problems require two *distinct* categories,
a selector that scores examples independently of what it already picked
tends to pick two examples of the same category and fail coverage, while a
sequential policy can diversify. Category and requirement information is
exposed through the embeddings, so the task is fully learnable from frozen
vectors.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, DatasetSplits, Example
from .environment import RewardBreakdown, goal_reward, terminal_reward
from .rng import child_rng


@dataclass
class SyntheticTask:
    n_categories: int
    horizon: int
    categories: np.ndarray  # (|C|,) int, corpus-order
    qualities: np.ndarray  # (|C|,) in [0, 1], corpus-order
    required: dict  # problem id -> frozenset of categories
    example_info: dict  # example id -> (category, quality)

    def required_set(self, problem):
        return self.required[problem.id]


class SyntheticEnvironment:
    def __init__(self, task):
        self.task = task

    def episode(self, problem, selected_examples):
        info = self.task.example_info
        cats = {info[ex.id][0] for ex in selected_examples}
        quals = [info[ex.id][1] for ex in selected_examples]
        correct = self.task.required[problem.id] <= cats
        g = goal_reward(correct)
        confidence = 2.0 * float(np.mean(quals)) - 1.0 if quals else -1.0
        text = (
            f"covered categories {sorted(cats)} for required "
            f"{sorted(self.task.required[problem.id])}. Final Answer: "
            f"{'covered' if correct else 'uncovered'}"
        )
        return (
            RewardBreakdown(
                goal=g, confidence=confidence,
                terminal=terminal_reward(g, confidence), correct=correct,
            ),
            text,
        )

    def episode_batch(self, pairs):
        return [self.episode(problem, examples) for problem, examples in pairs]


def _category_vector(rng, d_e, n_categories, category, quality, noise=0.05):
    v = np.zeros(d_e)
    v[category] = 1.0
    v[n_categories] = quality
    v[n_categories + 1 :] = noise * rng.standard_normal(d_e - n_categories - 1)
    return v / np.linalg.norm(v)


def _requirement_vector(rng, d_e, n_categories, required, noise=0.05):
    v = np.zeros(d_e)
    for cat in required:
        v[cat] = 1.0
    v[n_categories + 1 :] = noise * rng.standard_normal(d_e - n_categories - 1)
    return v / np.linalg.norm(v)


def make_synthetic_task(
    seed,
    n_categories=4,
    corpus_size=50,
    n_train_problems=500,
    n_validation=100,
    horizon=2,
    two_category_fraction=0.85,
    quality_range=(0.8, 1.0),
    d_e=None,
):
    """Build (environment, splits) for the coverage task, deterministic per seed."""
    if d_e is None:
        d_e = n_categories + 6
    rng = child_rng(seed, "synthetic")

    categories = np.array([i % n_categories for i in range(corpus_size)])
    rng.shuffle(categories)
    qualities = rng.uniform(quality_range[0], quality_range[1], size=corpus_size)
    example_info = {}
    corpus_examples = []
    for i in range(corpus_size):
        ex_id = f"synth-ex-{i}"
        example_info[ex_id] = (int(categories[i]), float(qualities[i]))
        emb = _category_vector(rng, d_e, n_categories, int(categories[i]), float(qualities[i]))
        corpus_examples.append(
            Example(
                id=ex_id,
                problem_text=f"demonstration {i} of category {categories[i]}",
                solution_text=f"worked demonstration of category {categories[i]}. Final Answer: {categories[i]}",
                final_answer=str(int(categories[i])),
                embedding=emb.astype(np.float32),
            )
        )
    corpus = Corpus.from_examples(corpus_examples)

    required = {}

    def make_problems(count, prefix):
        problems = []
        for j in range(count):
            if horizon >= 2 and rng.random() < two_category_fraction:
                req = frozenset(rng.choice(n_categories, size=2, replace=False).tolist())
            else:
                req = frozenset([int(rng.integers(n_categories))])
            pid = f"{prefix}-{j}"
            required[pid] = req
            emb = _requirement_vector(rng, d_e, n_categories, req)
            problems.append(
                Example(
                    id=pid,
                    problem_text=f"cover categories {sorted(req)}",
                    solution_text="pick one demonstration per required category. Final Answer: covered",
                    final_answer="covered",
                    embedding=emb.astype(np.float32),
                )
            )
        return tuple(problems)

    train_problems = make_problems(n_train_problems, "synth-train")
    validation_problems = make_problems(n_validation, "synth-val")

    task = SyntheticTask(
        n_categories=n_categories,
        horizon=horizon,
        categories=categories,
        qualities=qualities,
        required=required,
        example_info=example_info,
    )
    splits = DatasetSplits(
        train_problems=train_problems,
        validation_problems=validation_problems,
        test_problems=(),
        train_corpus=corpus,
        inference_corpus=corpus,
    )
    return SyntheticEnvironment(task), splits


# ---------------------------------------------------------------------------
# Reference selectors for benchmarking
# ---------------------------------------------------------------------------

def _terminal_rewards_for_selection(task, problems, picks):
    """Mean terminal reward of picking corpus indices ``picks[p]`` per problem."""
    total = 0.0
    for p, problem in enumerate(problems):
        cats = {int(task.categories[i]) for i in picks[p]}
        correct = task.required[problem.id] <= cats
        conf = 2.0 * float(np.mean([task.qualities[i] for i in picks[p]])) - 1.0
        total += terminal_reward(goal_reward(correct), conf)
    return total / len(problems)


def random_baseline_reward(env, problems, corpus, n_draws=200, seed=0):
    """Monte Carlo mean terminal reward of uniform selection without replacement."""
    task = env.task
    rng = child_rng(seed, "baseline", "synthetic-random")
    n = len(corpus)
    total = 0.0
    for _ in range(n_draws):
        picks = [rng.choice(n, size=task.horizon, replace=False) for _ in problems]
        total += _terminal_rewards_for_selection(task, problems, picks)
    return total / n_draws


def best_fixed_selection_reward(env, problems, corpus):
    """Brute force over all fixed example subsets of size T (problem-agnostic)."""
    task = env.task
    best = -np.inf
    n = len(corpus)
    req_masks = np.array(
        [sum(1 << c for c in task.required[p.id]) for p in problems], dtype=np.int64
    )
    for combo in itertools.combinations(range(n), task.horizon):
        combo_mask = 0
        for i in combo:
            combo_mask |= 1 << int(task.categories[i])
        correct = (req_masks & combo_mask) == req_masks
        conf = 2.0 * float(np.mean(task.qualities[list(combo)])) - 1.0
        mean_reward = float(np.mean(0.5 * (2.0 * correct - 1.0) + 0.5 * conf))
        best = max(best, mean_reward)
    return best


def best_similarity_scorer_reward(env, problems, corpus, quality_weights=None):
    """Brute force over independent scorers score(e|x) = <x, e> + beta * q.

    This is the natural independent top-k family for this task (embedding
    similarity plus a per-example quality bonus); it cannot condition the
    second pick on the first, so it duplicates categories on problems where
    the top-scoring examples share one.
    """
    task = env.task
    if quality_weights is None:
        quality_weights = np.linspace(0.0, 2.0, 21)
    x = np.stack([p.embedding for p in problems]).astype(np.float64)
    e = np.asarray(corpus.embedding_matrix, dtype=np.float64)
    sim = x @ e.T  # (P, |C|)
    best = -np.inf
    for beta in quality_weights:
        scores = sim + beta * task.qualities
        # ties break to the lowest index: sort on (-score, index)
        order = np.lexsort(
            (np.broadcast_to(np.arange(e.shape[0]), scores.shape), -scores), axis=1
        )
        picks = order[:, : task.horizon]
        best = max(best, _terminal_rewards_for_selection(task, problems, picks))
    return best


def best_independent_reward(env, problems, corpus):
    """Best mean terminal reward over the brute-forced independent families."""
    return max(
        best_fixed_selection_reward(env, problems, corpus),
        best_similarity_scorer_reward(env, problems, corpus),
    )
