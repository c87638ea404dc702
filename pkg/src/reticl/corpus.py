"""Dataset loading, frozen embeddings, and experiment splits.

Examples carry precomputed unit-norm embeddings; the library never embeds
text itself. Solutions are rewritten so that every example ends in a
"Final Answer: X" statement, which is also the convention the answer
extractor expects at generation time.
"""

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensorio
from .environment import canonicalize_answer, extract_final_answer
from .rng import child_rng

NORM_TOL = 1e-5


class DatasetError(ValueError):
    """Raised for malformed dataset or embedding inputs."""


@dataclass(frozen=True)
class Example:
    id: str
    problem_text: str
    solution_text: str
    final_answer: str
    embedding: np.ndarray = None
    choices: tuple = None

    def with_embedding(self, embedding):
        return replace(self, embedding=embedding)


@dataclass(frozen=True)
class Corpus:
    examples: tuple
    embedding_matrix: np.ndarray

    @classmethod
    def from_examples(cls, examples):
        examples = tuple(examples)
        if not examples:
            raise DatasetError("corpus must contain at least one example")
        ids = [ex.id for ex in examples]
        if len(set(ids)) != len(ids):
            raise DatasetError("corpus example ids must be unique")
        for ex in examples:
            if ex.embedding is None:
                raise DatasetError(f"example {ex.id} has no embedding attached")
        matrix = np.stack([ex.embedding for ex in examples])
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        bad = np.where(np.abs(norms - 1.0) > NORM_TOL)[0]
        if bad.size:
            raise DatasetError(
                f"example {ids[bad[0]]} embedding norm {norms[bad[0]]:.6f} is not 1"
            )
        return cls(examples=examples, embedding_matrix=matrix)

    def __len__(self):
        return len(self.examples)

    @property
    def dim(self):
        return self.embedding_matrix.shape[1]

    def index_of(self, example_id):
        for i, ex in enumerate(self.examples):
            if ex.id == example_id:
                return i
        raise KeyError(example_id)


@dataclass(frozen=True)
class DatasetSplits:
    train_problems: tuple
    validation_problems: tuple
    test_problems: tuple
    train_corpus: Corpus
    inference_corpus: Corpus


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

def _iter_records(path):
    """Yield (record_key, record) from array JSON, object JSON, or JSONL."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if not stripped:
        return
    if stripped[0] == "[":
        for i, rec in enumerate(json.loads(text)):
            yield str(i), rec
    elif stripped[0] == "{":
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            data = None
        if isinstance(data, dict) and all(isinstance(v, dict) for v in data.values()):
            # object keyed by problem id (TabMWP release layout); a JSONL file
            # with a single record has plain values and falls through
            for key, rec in data.items():
                yield str(key), rec
            return
        for i, line in enumerate(l for l in text.splitlines() if l.strip()):
            yield str(i), json.loads(line)
    else:
        raise DatasetError(f"{path}: not JSON array, JSON object, or JSONL")


def _require(record, key, fields):
    missing = [f for f in fields if f not in record or record[f] is None]
    if missing:
        raise DatasetError(f"record {key}: missing field(s) {missing}")


def _gsm8k_example(key, record):
    _require(record, key, ["question", "answer"])
    answer = record["answer"]
    if "####" not in answer:
        raise DatasetError(f"record {key}: answer has no '####' final-answer marker")
    body, _, final = answer.rpartition("####")
    final = canonicalize_answer(final)
    if not final:
        raise DatasetError(f"record {key}: empty final answer")
    # drop calculator annotations like <<21*2=42>>
    body = body.replace("####", "").strip()
    body = re.sub(r"<<[^>]*>>", "", body)
    solution = " ".join(body.split())
    solution = f"{solution} Final Answer: {final}".strip()
    return Example(
        id=f"gsm8k-{key}",
        problem_text=" ".join(record["question"].split()),
        solution_text=solution,
        final_answer=final,
    )


def _linearize_table(record):
    title = record.get("table_title") or ""
    table = record["table"]
    if title:
        return f"Table: [TITLE]: {title}\n{table}"
    return f"Table: {table}"


def _tabmwp_example(key, record):
    _require(record, key, ["table", "question", "answer", "solution"])
    final = canonicalize_answer(str(record["answer"]))
    if not final:
        raise DatasetError(f"record {key}: empty final answer")
    solution = " ".join(str(record["solution"]).split())
    if extract_final_answer(solution) is None:
        solution = f"{solution} Final Answer: {final}".strip()
    choices = record.get("choices")
    return Example(
        id=f"tabmwp-{key}",
        problem_text=f"{_linearize_table(record)}\nProblem: {record['question']}",
        solution_text=solution,
        final_answer=final,
        choices=tuple(choices) if choices else None,
    )


_PARSERS = {"gsm8k": _gsm8k_example, "tabmwp": _tabmwp_example}


def load_dataset(path, format):
    """Parse a dataset file into Examples (without embeddings)."""
    if format not in _PARSERS:
        raise DatasetError(f"unknown dataset format {format!r}; expected one of {sorted(_PARSERS)}")
    parser = _PARSERS[format]
    examples = [parser(key, rec) for key, rec in _iter_records(path)]
    for ex in examples:
        extracted = extract_final_answer(ex.solution_text)
        if extracted != ex.final_answer:
            raise DatasetError(
                f"example {ex.id}: final answer {ex.final_answer!r} not recoverable "
                f"from solution (got {extracted!r})"
            )
    return examples


def attach_embeddings(examples, path):
    """Attach rows of an embedding file to examples, matched by order and id."""
    matrix, ids = tensorio.read_embedding_file(path)
    if len(ids) != len(examples):
        raise DatasetError(
            f"embedding file has {len(ids)} rows, expected {len(examples)} examples"
        )
    for i, (ex, row_id) in enumerate(zip(examples, ids)):
        if ex.id != row_id:
            raise DatasetError(f"row {i}: embedding id {row_id!r} != example id {ex.id!r}")
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    bad = np.where(np.abs(norms - 1.0) > NORM_TOL)[0]
    if bad.size:
        raise DatasetError(
            f"row {bad[0]} has norm {norms[bad[0]]:.6f}; embedding files must be pre-normalized"
        )
    return [ex.with_embedding(matrix[i]) for i, ex in enumerate(examples)]


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def make_splits(
    train_set,
    validation_set=None,
    test_set=(),
    *,
    train_problem_count=5000,
    train_corpus_size=200,
    validation_size=500,
    validation_reserve=1000,
    seed=0,
):
    """Build the experiment splits, deterministically per seed.

    When the dataset has no validation split (GSM8K), ``validation_reserve``
    problems are first carved out of the training set. The training corpus
    and the episode problems are disjoint samples of the remaining training
    set; the inference corpus is the full remaining training set.
    """
    train_set = list(train_set)
    rng = child_rng(seed, "splits")
    if validation_set is None:
        if validation_reserve >= len(train_set):
            raise DatasetError(
                f"cannot reserve {validation_reserve} validation problems from "
                f"{len(train_set)} training problems"
            )
        reserved = rng.choice(len(train_set), size=validation_reserve, replace=False)
        reserved_set = set(reserved.tolist())
        validation_set = [train_set[i] for i in sorted(reserved_set)]
        train_set = [ex for i, ex in enumerate(train_set) if i not in reserved_set]
    else:
        validation_set = list(validation_set)

    if train_corpus_size + train_problem_count > len(train_set):
        raise DatasetError(
            f"need {train_corpus_size} corpus + {train_problem_count} episode problems "
            f"but only {len(train_set)} training problems are available"
        )
    if validation_size > len(validation_set):
        raise DatasetError(
            f"validation subset of {validation_size} exceeds {len(validation_set)} available"
        )

    picked = rng.choice(
        len(train_set), size=train_corpus_size + train_problem_count, replace=False
    )
    corpus_idx = sorted(picked[:train_corpus_size].tolist())
    problem_idx = sorted(picked[train_corpus_size:].tolist())
    val_idx = sorted(rng.choice(len(validation_set), size=validation_size, replace=False).tolist())

    return DatasetSplits(
        train_problems=tuple(train_set[i] for i in problem_idx),
        validation_problems=tuple(validation_set[i] for i in val_idx),
        test_problems=tuple(test_set),
        train_corpus=Corpus.from_examples(train_set[i] for i in corpus_idx),
        inference_corpus=Corpus.from_examples(train_set),
    )


def subsample_corpus(corpus, fraction, seed, min_size=1):
    """Uniform random sub-corpus of size ceil(fraction * |corpus|)."""
    if not 0.0 < fraction <= 1.0:
        raise DatasetError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return corpus
    size = int(np.ceil(fraction * len(corpus)))
    if size < min_size:
        raise DatasetError(
            f"subsampled corpus of {size} examples is smaller than the minimum {min_size}"
        )
    rng = child_rng(seed, "subsample")
    idx = sorted(rng.choice(len(corpus), size=size, replace=False).tolist())
    return Corpus.from_examples(corpus.examples[i] for i in idx)
