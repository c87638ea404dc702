import json

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

VOCAB = (
    ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
    + list("abcdefghijklmnopqrstuvwxyz0123456789")
    + ["##s", "##er", "##ing", "the", "a", "is", "of", "answer", "final",
       "muffin", "tray", "apple", "how", "many", "in", "total", "left"]
)


@pytest.fixture(scope="session")
def tiny_encoder_dir(tmp_path_factory):
    """A small randomly-initialized BERT saved locally; no network needed."""
    out = tmp_path_factory.mktemp("tiny-encoder")
    vocab_file = out / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizerFast(vocab_file=str(vocab_file), do_lower_case=True)
    tokenizer.save_pretrained(out)

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=16, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32, max_position_embeddings=64,
    )
    BertModel(config).save_pretrained(out)
    return str(out)


@pytest.fixture(scope="session")
def wider_encoder_dir(tmp_path_factory):
    """Same tokenizer, different hidden size; used for drift detection tests."""
    out = tmp_path_factory.mktemp("wider-encoder")
    vocab_file = out / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n")
    BertTokenizerFast(vocab_file=str(vocab_file), do_lower_case=True).save_pretrained(out)
    torch.manual_seed(1)
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=24, num_hidden_layers=1,
        num_attention_heads=2, intermediate_size=32, max_position_embeddings=64,
    )
    BertModel(config).save_pretrained(out)
    return str(out)


@pytest.fixture(scope="session")
def gsm8k_file(tmp_path_factory):
    records = [
        {"question": "A baker makes 4 trays of 12 muffins. How many muffins in total?",
         "answer": "4 trays of 12 is 4 * 12 = <<4*12=48>>48 muffins.\n#### 48"},
        {"question": "Sam had 10 apples and ate 3. How many are left?",
         "answer": "Sam has 10 - 3 = <<10-3=7>>7 apples left.\n#### 7"},
        {"question": "Three friends split 21 candies evenly. How many does each get?",
         "answer": "Each gets 21 / 3 = <<21/3=7>>7 candies.\n#### 7"},
    ]
    path = tmp_path_factory.mktemp("data") / "tiny.jsonl"
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
    return str(path)
