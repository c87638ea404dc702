"""Walk through the selection machinery step by step.

Shows how a problem is encoded into the initial latent state, how the masked
policy over the corpus shifts after each pick, and that the precomputed
inner-product index reproduces the policy argmax.

Usage: python3 demos/index_and_retrieval.py
"""

import numpy as np

from reticl import index, retriever
from reticl.synthetic import make_synthetic_task

env, splits = make_synthetic_task(3, n_categories=3, corpus_size=12,
                                  n_train_problems=20, n_validation=5, horizon=2)
corpus = splits.train_corpus
params = retriever.init_parameters(16, corpus.dim, seed=0)

problem = splits.validation_problems[0]
print(f"problem: {problem.problem_text}")
print(f"required categories: {sorted(env.task.required[problem.id])}")
print()

state = retriever.encode_problem(problem.embedding, params)
tc = index.build(params.W_a, corpus)

for t in range(2):
    dist = retriever.policy(state, corpus, params)
    top3 = index.top_k(tc, state.h, 3, mask=state.selected)
    assert top3[0] == retriever.greedy_action(dist)  # index == policy argmax
    print(f"step {t}: value estimate {retriever.value_estimate(state, params):+.3f}")
    for i in top3:
        cat = env.task.example_info[corpus.examples[i].id][0]
        print(f"    candidate {i:2d}  category {cat}  prob {dist.probs[i]:.3f}")
    action = retriever.greedy_action(dist)
    print(f"    -> picked {action}")
    state = retriever.step(state, corpus.embedding_matrix[action], action, params)

# already-picked examples have probability exactly zero
dist = retriever.policy(state, corpus, params)
print()
print(f"probabilities of the two picked examples: "
      f"{[float(dist.probs[i]) for i in state.selected]}")
