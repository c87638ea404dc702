"""Inner-product retrieval over bilinear-transformed corpus embeddings.

Because the selection score factorizes as <h, W_a e>, the rows W_a e can be
precomputed once per parameter version and queried with a plain inner
product. Exact search is the default; at the corpus sizes this library
targets it is already fast, so no approximate backend is provided.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensorio

NORM_TOL = 1e-5


@dataclass(frozen=True)
class TransformedCorpus:
    rows: np.ndarray  # (|C|, d_h), row i = W_a @ e_i
    corpus_hash: str
    version: int  # parameter version stamp; bump whenever W_a changes


def corpus_fingerprint(corpus):
    return hashlib.sha256(np.ascontiguousarray(corpus.embedding_matrix, dtype="<f4").tobytes()).hexdigest()


def build(W_a, corpus, version=0):
    """Precompute W_a e for every corpus row."""
    emb = np.asarray(corpus.embedding_matrix, dtype=np.float64)
    W_a = np.asarray(W_a, dtype=np.float64)
    if W_a.shape[1] != emb.shape[1]:
        raise ValueError(
            f"W_a expects embeddings of dimension {W_a.shape[1]}, corpus has {emb.shape[1]}"
        )
    norms = np.linalg.norm(emb, axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOL):
        raise ValueError("corpus embeddings must be unit-norm")
    return TransformedCorpus(
        rows=emb @ W_a.T, corpus_hash=corpus_fingerprint(corpus), version=version
    )


def top_k(tc, h, k, mask=()):
    """Exact top-k corpus indices by descending <h, row>, masked indices
    excluded, ties broken by lowest index."""
    h = np.asarray(h, dtype=np.float64)
    n = tc.rows.shape[0]
    mask = set(mask)
    if k > n - len(mask):
        raise ValueError(f"k={k} exceeds {n - len(mask)} unmasked entries")
    scores = tc.rows @ h
    candidates = np.array([i for i in range(n) if i not in mask])
    # stable sort on (-score, index): lexsort uses the last key as primary
    order = np.lexsort((candidates, -scores[candidates]))
    return [int(candidates[i]) for i in order[:k]]


def save_cache(path, tc):
    """Persist a transformed corpus in the checkpoint tensor container."""
    tensorio.save_checkpoint(
        path, {"rows": tc.rows}, {"corpus_hash": tc.corpus_hash, "version": tc.version}
    )


def load_cache(path, expected_corpus_hash=None, expected_version=None):
    tensors, meta = tensorio.load_checkpoint(path)
    if expected_corpus_hash is not None and meta["corpus_hash"] != expected_corpus_hash:
        raise ValueError("cached index was built for a different corpus")
    if expected_version is not None and meta["version"] != expected_version:
        raise ValueError(
            f"cached index is stale: version {meta['version']}, expected {expected_version}"
        )
    return TransformedCorpus(
        rows=tensors["rows"].astype(np.float64),
        corpus_hash=meta["corpus_hash"],
        version=meta["version"],
    )
