"""Dataset -> frozen embedding file.

Embeddings are the attention-mask-weighted mean of the encoder's final-layer
token outputs, L2-normalized, stored as float32. Inference is deterministic
for a fixed model version, so re-running an export produces a bitwise
identical file; batch size must not change values beyond float tolerance.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from reticl import tensorio
from reticl.corpus import load_dataset

CHANNELS = ("full_example", "problem_only")
MAX_LENGTH = 512


class ExportError(RuntimeError):
    pass


@dataclass
class ExportSpec:
    dataset: str
    format: str  # gsm8k | tabmwp
    model: str  # encoder identifier or local directory
    channel: str  # full_example | problem_only
    output: str
    batch_size: int = 32
    device: str = "cpu"

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ExportError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        if self.batch_size <= 0:
            raise ExportError("batch_size must be positive")


def channel_text(example, channel):
    if channel == "problem_only":
        return example.problem_text
    return f"{example.problem_text}\n{example.solution_text}"


def _load_encoder(spec):
    try:
        tokenizer = AutoTokenizer.from_pretrained(spec.model)
        model = AutoModel.from_pretrained(spec.model)
    except Exception as err:
        raise ExportError(f"failed to load encoder {spec.model!r}: {err}") from err
    model.eval()
    model.to(spec.device)
    return tokenizer, model


def _mean_pool(last_hidden, attention_mask):
    # masked mean over the sequence axis; padding tokens contribute nothing
    mask = attention_mask.unsqueeze(-1).to(last_hidden.dtype)
    summed = (last_hidden * mask).sum(dim=1)
    counts = mask.sum(dim=1).clamp(min=1.0)
    return summed / counts


def encode_texts(texts, tokenizer, model, batch_size, device):
    rows = []
    with torch.no_grad():
        for start in range(0, len(texts), batch_size):
            batch = texts[start : start + batch_size]
            enc = tokenizer(batch, padding=True, truncation=True, max_length=MAX_LENGTH,
                            return_tensors="pt").to(device)
            out = model(**enc)
            pooled = _mean_pool(out.last_hidden_state, enc["attention_mask"])
            pooled = torch.nn.functional.normalize(pooled, p=2, dim=1)
            rows.append(pooled.cpu().to(torch.float32).numpy())
    return np.concatenate(rows, axis=0)


def _check_dimension_drift(output, dim):
    """A re-export must not silently change d_e under consumers' feet."""
    path = Path(output)
    if not path.exists():
        return
    try:
        previous, _ = tensorio.read_embedding_file(path)
    except tensorio.FileFormatError:
        return  # unreadable leftovers are simply overwritten
    if previous.shape[1] != dim:
        raise ExportError(
            f"{output} already holds {previous.shape[1]}-dimensional rows; "
            f"re-export would change the dimension to {dim}"
        )


def export(spec):
    """Encode every dataset example and write the embedding file + sidecar.

    Returns (matrix, ids) as written. Row order equals dataset order.
    """
    examples = load_dataset(spec.dataset, spec.format)
    if not examples:
        raise ExportError(f"dataset {spec.dataset} contains no examples")
    tokenizer, model = _load_encoder(spec)
    texts = [channel_text(ex, spec.channel) for ex in examples]
    matrix = encode_texts(texts, tokenizer, model, spec.batch_size, spec.device)

    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-5):
        raise ExportError("normalization failed; encoder produced a zero vector")

    _check_dimension_drift(spec.output, matrix.shape[1])
    ids = [ex.id for ex in examples]
    tensorio.write_embedding_file(spec.output, matrix, ids)
    return matrix, ids
