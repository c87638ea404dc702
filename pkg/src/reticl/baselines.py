"""Comparison selectors: random, kNN, independent top-k, exhaustive.

All of them run through the same environment and prompt path as the learned
policy; only the selection rule differs, so accuracies are directly
comparable.
"""

from dataclasses import dataclass

import numpy as np

from . import retriever


@dataclass
class SelectionResult:
    problem_id: str
    method: str  # random | knn | topk_independent | exhaustive | reticl
    selected_ids: list
    correct: bool


def random_select(corpus, horizon, rng):
    """Uniform sample of ``horizon`` distinct corpus indices."""
    if len(corpus) < horizon:
        raise ValueError(f"corpus of {len(corpus)} is smaller than horizon {horizon}")
    return [int(i) for i in rng.choice(len(corpus), size=horizon, replace=False)]


def knn_select(problem_embedding, problem_statement_embeddings, horizon):
    """The ``horizon`` corpus entries with smallest Euclidean distance between
    problem-statement embeddings, most similar first, ties by lowest index.

    Note this scores problem statements only, a separate embedding channel
    from the problem+solution embeddings the policy consumes.
    """
    if problem_statement_embeddings is None:
        raise ValueError("problem-statement embeddings are required for kNN selection")
    x = np.asarray(problem_embedding, dtype=np.float64)
    rows = np.asarray(problem_statement_embeddings, dtype=np.float64)
    dists = np.linalg.norm(rows - x, axis=1)
    order = np.lexsort((np.arange(len(rows)), dists))
    return [int(i) for i in order[:horizon]]


def topk_independent_select(scorer, corpus, horizon):
    """Top-``horizon`` examples by an independent per-example score,
    ties by lowest index."""
    scores = np.array([float(scorer(i, corpus.examples[i])) for i in range(len(corpus))])
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [int(i) for i in order[:horizon]]


def initial_policy_scorer(params, problem_embedding, corpus):
    """Scorer adapter: the trained policy frozen at its first step.

    Its first pick matches the sequential policy's first greedy pick; the
    remaining picks ignore what was already selected.
    """
    state = retriever.encode_problem(problem_embedding, params)
    activations = np.asarray(corpus.embedding_matrix, dtype=np.float64) @ (
        params.W_a.T @ state.h
    )
    return lambda i, example: activations[i]


def linear_scorer(weights, corpus, bias=0.0):
    """Scorer adapter for any linear model over example embeddings."""
    scores = np.asarray(corpus.embedding_matrix, dtype=np.float64) @ np.asarray(weights) + bias
    return lambda i, example: scores[i]


def exhaustive_eval(problem, corpus, env, corpus_cap=100):
    """One-shot prompt per corpus example until one solves the problem.

    Returns (solved, attempts, failures); environment errors are counted and
    skipped rather than fatal.
    """
    attempts = 0
    failures = 0
    for example in corpus.examples[:corpus_cap]:
        attempts += 1
        try:
            reward, _ = env.episode(problem, [example])
        except Exception:
            failures += 1
            continue
        if reward.correct:
            return True, attempts, failures
    return False, attempts, failures
