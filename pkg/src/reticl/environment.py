"""Prompting, generation, answer checking, and reward computation.

The reward for an episode has two components: a goal reward in {-1, +1} for
final-answer correctness, and a confidence reward in [-1, 1] derived from the
per-token geometric-mean probability of the generated text. The terminal
reward is their average and is emitted only at the last step of an episode.
"""

import hashlib
import json
import math
import os
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import requests

MAX_GENERATED_TOKENS = 400
STOP_SEQUENCE = "\n\nProblem:"
FINAL_ANSWER_MARKER = re.compile(r"final answer:", re.IGNORECASE)
_NUMERIC_TOL = 1e-6


class GenerationError(RuntimeError):
    """Raised when the LLM endpoint cannot produce a usable generation."""


class MissingLogprobsError(GenerationError):
    """The endpoint returned no token likelihoods.

    Confidence rewards cannot be computed for such models; rerun with the
    confidence reward disabled (goal reward only).
    """


@dataclass
class Generation:
    text: str
    token_logprobs: list
    finish_reason: str  # "stop" or "length"

    def __post_init__(self):
        if any(lp > 0 for lp in self.token_logprobs):
            raise ValueError("token log-probabilities must be <= 0")


@dataclass
class RewardBreakdown:
    goal: float
    confidence: float
    terminal: float
    correct: bool


# ---------------------------------------------------------------------------
# Prompt construction
# ---------------------------------------------------------------------------

def _render_problem_text(example):
    """Problem text plus an options line for multiple-choice problems.

    The datasets do not fix how answer options appear in the prompt; we render
    them as a single "Options: a, b, c" line after the question.
    """
    text = example.problem_text
    choices = getattr(example, "choices", None)
    if choices:
        text = f"{text}\nOptions: {', '.join(choices)}"
    return text


def build_prompt(examples, problem):
    """Render selected examples (in selection order) followed by the query.

    Each example becomes "Problem: ...\\nSolution: ...\\n\\n"; the query ends
    with an unterminated "Solution:" for the model to complete.
    """
    parts = []
    for ex in examples:
        parts.append(f"Problem: {_render_problem_text(ex)}\nSolution: {ex.solution_text}\n\n")
    parts.append(f"Problem: {_render_problem_text(problem)}\nSolution:")
    return "".join(parts)


# ---------------------------------------------------------------------------
# Answer extraction and checking
# ---------------------------------------------------------------------------

def canonicalize_answer(text):
    """Strip formatting from a final answer: whitespace, $, %, trailing
    period, and thousands separators."""
    ans = text.strip()
    ans = ans.replace("$", "").replace("%", "")
    ans = ans.rstrip(".")
    ans = re.sub(r"(?<=\d),(?=\d{3}\b)", "", ans)
    return ans.strip()


def extract_final_answer(text):
    """Return the canonicalized answer after the last "Final Answer:" marker,
    or None when no marker is present."""
    matches = list(FINAL_ANSWER_MARKER.finditer(text))
    if not matches:
        return None
    tail = text[matches[-1].end():].strip()
    # first line only; the model may ramble after the answer
    tail = tail.splitlines()[0] if tail else ""
    return canonicalize_answer(tail)


def _try_float(text):
    try:
        return float(text.replace(",", ""))
    except (ValueError, AttributeError):
        return None


def _normalize_string(text):
    text = text.lower().strip()
    text = text.translate(str.maketrans("", "", string.punctuation))
    return " ".join(text.split())


def check_correct(predicted, gold, choices=None):
    """Final-answer equality: numeric with relative tolerance when both sides
    parse as numbers, otherwise whole-string normalized equality.

    Multiple-choice answers are resolved against ``choices`` by the same
    whole-string rule; substring and regex matching are deliberately not used
    since they produce both false positives and false negatives.
    """
    if not gold:
        raise ValueError("gold answer must be non-empty")
    if predicted is None:
        return False
    if choices:
        resolved = None
        for choice in choices:
            if _normalize_string(predicted) == _normalize_string(choice):
                resolved = choice
                break
        if resolved is None:
            return False
        predicted = resolved
    a, b = _try_float(predicted), _try_float(gold)
    if a is not None and b is not None:
        return abs(a - b) <= _NUMERIC_TOL * max(1.0, abs(b))
    return _normalize_string(predicted) == _normalize_string(gold)


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------

def goal_reward(correct):
    """+1 for a correct final answer, -1 otherwise."""
    return 1.0 if correct else -1.0


def confidence_reward(token_logprobs):
    """Inverse perplexity of the generation rescaled to [-1, 1].

    Computed in log space: 2*exp(mean(logprobs)) - 1. An empty generation
    gets the worst score -1.
    """
    if any(lp > 0 for lp in token_logprobs):
        raise ValueError("token log-probabilities must be <= 0")
    n = len(token_logprobs)
    if n == 0:
        return -1.0
    return 2.0 * math.exp(sum(token_logprobs) / n) - 1.0


def terminal_reward(goal, confidence, t=None, horizon=None):
    """0.5*goal + 0.5*confidence at the final step, 0 before it."""
    if t is not None and horizon is not None and t < horizon:
        return 0.0
    return 0.5 * goal + 0.5 * confidence


def reward_breakdown(correct, token_logprobs):
    g = goal_reward(correct)
    c = confidence_reward(token_logprobs)
    return RewardBreakdown(goal=g, confidence=c, terminal=terminal_reward(g, c), correct=correct)


# ---------------------------------------------------------------------------
# LLM clients
# ---------------------------------------------------------------------------

ENDPOINT_ENV_VAR = "RETICL_LLM_ENDPOINT"
API_KEY_ENV_VAR = "RETICL_LLM_API_KEY"
MODEL_ENV_VAR = "RETICL_LLM_MODEL"


@dataclass
class LLMClient:
    """Client for an OpenAI-compatible completions endpoint.

    Greedy decoding (temperature 0), 400-token cap, stop at the next
    pseudo-example, token logprobs requested. Transport failures are retried
    with exponential backoff up to ``max_retries`` times.
    """

    endpoint: str = field(default_factory=lambda: os.environ.get(ENDPOINT_ENV_VAR, ""))
    model: str = field(default_factory=lambda: os.environ.get(MODEL_ENV_VAR, ""))
    api_key: str = field(default_factory=lambda: os.environ.get(API_KEY_ENV_VAR, ""))
    max_retries: int = 5
    backoff_seconds: float = 1.0
    timeout_seconds: float = 120.0
    max_in_flight: int = 20

    def complete(self, prompt):
        if not self.endpoint or not self.model:
            raise GenerationError(
                f"LLM endpoint/model not configured; set {ENDPOINT_ENV_VAR} and {MODEL_ENV_VAR}"
            )
        payload = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": MAX_GENERATED_TOKENS,
            "temperature": 0,
            "logprobs": 1,
            "stop": [STOP_SEQUENCE],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout_seconds
                )
                resp.raise_for_status()
                return self._parse_response(resp.json())
            except (requests.RequestException, KeyError, ValueError) as err:
                last_error = err
                time.sleep(self.backoff_seconds * 2**attempt)
        raise GenerationError(f"completion failed after {self.max_retries} attempts: {last_error}")

    @staticmethod
    def _parse_response(body):
        choice = body["choices"][0]
        logprobs = choice.get("logprobs")
        if not logprobs or logprobs.get("token_logprobs") is None:
            raise MissingLogprobsError(
                "endpoint returned no token logprobs; rerun with the confidence reward disabled"
            )
        token_logprobs = [lp for lp in logprobs["token_logprobs"] if lp is not None]
        return Generation(
            text=choice["text"],
            token_logprobs=token_logprobs,
            finish_reason=choice.get("finish_reason", "stop"),
        )

    def complete_many(self, prompts):
        """Issue completions concurrently; results keep prompt order."""
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self.complete, prompts))


def prompt_hash(prompt):
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockClient:
    """Offline stand-in: maps sha256(prompt) -> {"text", "logprobs"}."""

    def __init__(self, responses):
        self.responses = dict(responses)

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls(json.load(f))

    def complete(self, prompt):
        key = prompt_hash(prompt)
        if key not in self.responses:
            raise GenerationError(f"mock client has no response for prompt hash {key}")
        entry = self.responses[key]
        return Generation(
            text=entry["text"],
            token_logprobs=list(entry["logprobs"]),
            finish_reason=entry.get("finish_reason", "stop"),
        )

    def complete_many(self, prompts):
        return [self.complete(p) for p in prompts]


def generate(client, prompt):
    """Run one completion through a configured client."""
    return client.complete(prompt)


# ---------------------------------------------------------------------------
# Episode environment over an LLM
# ---------------------------------------------------------------------------

class LLMEnvironment:
    """Turns (problem, selected examples) into a reward via a language model."""

    def __init__(self, client):
        self.client = client

    def episode(self, problem, selected_examples):
        prompt = build_prompt(selected_examples, problem)
        gen = self.client.complete(prompt)
        predicted = extract_final_answer(gen.text)
        correct = check_correct(
            predicted, problem.final_answer, getattr(problem, "choices", None)
        )
        return reward_breakdown(correct, gen.token_logprobs), gen.text

    def episode_batch(self, pairs):
        """Run episodes concurrently; ``pairs`` is [(problem, examples), ...]."""
        prompts = [build_prompt(exs, prob) for prob, exs in pairs]
        gens = self.client.complete_many(prompts)
        out = []
        for (problem, _), gen in zip(pairs, gens):
            predicted = extract_final_answer(gen.text)
            correct = check_correct(
                predicted, problem.final_answer, getattr(problem, "choices", None)
            )
            out.append((reward_breakdown(correct, gen.token_logprobs), gen.text))
        return out
