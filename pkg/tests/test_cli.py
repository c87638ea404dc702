import json

import numpy as np
import pytest

from reticl import retriever, tensorio, trainer
from reticl.cli import load_config, main
from reticl.cli import ConfigError

SMALL_TRAIN = [
    "--set", "epochs=2", "--set", "hidden_size=16", "--set", "seed=7",
    "--set", "train_corpus_size=20", "--set", "train_problem_count=40",
    "--set", "validation_size=10", "--set", "c_entropy=0.3",
    "--set", "data.synthetic.corpus_size=20",
    "--set", "data.synthetic.n_train_problems=40",
    "--set", "data.synthetic.n_validation=10",
]


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

def test_load_config_defaults():
    config, train_config = load_config(None, [])
    assert config["env"]["kind"] == "synthetic"
    assert train_config.learning_rate == 0.001


def test_config_file_then_cli_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"train": {"learning_rate": 0.01, "epochs": 7}}))
    config, train_config = load_config(path, ["learning_rate=0.5"])
    assert train_config.learning_rate == 0.5  # CLI wins over file
    assert train_config.epochs == 7  # file wins over default


def test_set_parses_json_values():
    _, train_config = load_config(None, ["advantage_normalization=false", "epochs=3"])
    assert train_config.advantage_normalization is False
    assert train_config.epochs == 3


def test_set_env_shorthand():
    config, _ = load_config(None, ["env=llm"])
    assert config["env"]["kind"] == "llm"


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        load_config(None, ["not_a_key.at_all=1"])
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"train": {"bogus": 1}}))
    with pytest.raises(ConfigError, match="unknown train config"):
        load_config(path, [])


def test_invalid_value_rejected():
    with pytest.raises(ConfigError):
        load_config(None, ["eps_clip=2.0"])


def test_malformed_set_entry():
    with pytest.raises(ConfigError, match="key=value"):
        load_config(None, ["epochs"])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def test_schema_command(capsys):
    assert main(["export-embeddings-schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert schema["file"]["magic"] == "RTEB"
    assert schema["file"]["version"]["value"] == 1


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("cli-run")
    code = main(["train", "--run-dir", str(run_dir), *SMALL_TRAIN])
    assert code == 0
    return run_dir


def test_train_command_artifacts(trained_run):
    manifest = json.loads((trained_run / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["effective_train_config"]["epochs"] == 2
    assert manifest["config"]["data"]["synthetic"]["corpus_size"] == 20
    assert any(p.endswith("checkpoint_best.rtck") for p in manifest["outputs"])
    assert (trained_run / "metrics.jsonl").exists()
    assert (trained_run / "checkpoint_last.rtck").exists()


def test_eval_reticl_command(trained_run, tmp_path, capsys):
    out = tmp_path / "report.jsonl"
    code = main(["eval", "--method", "reticl",
                 "--checkpoint", str(trained_run / "checkpoint_best.rtck"),
                 "--out", str(out), *SMALL_TRAIN])
    assert code == 0
    assert "method=reticl" in capsys.readouterr().out
    lines = [json.loads(l) for l in open(out)]
    summary = lines[0]["summary"]
    assert summary["problems"] == 10
    assert 0.0 <= summary["accuracy"] <= 1.0
    assert len(lines) == 1 + 10  # summary + one record per problem


def test_eval_random_multi_seed(trained_run, tmp_path):
    out = tmp_path / "random.jsonl"
    code = main(["baseline", "--method", "random", "--seeds", "3",
                 "--out", str(out), *SMALL_TRAIN])
    assert code == 0
    summary = json.loads(open(out).readline())["summary"]
    assert len(summary["accuracy_per_seed"]) == 3
    assert summary["accuracy"] == pytest.approx(np.mean(summary["accuracy_per_seed"]))


def test_eval_topk_command(trained_run):
    code = main(["eval", "--method", "topk",
                 "--checkpoint", str(trained_run / "checkpoint_best.rtck"),
                 *SMALL_TRAIN])
    assert code == 0


def test_eval_corpus_fraction(trained_run, tmp_path):
    out = tmp_path / "frac.jsonl"
    code = main(["eval", "--method", "reticl",
                 "--checkpoint", str(trained_run / "checkpoint_best.rtck"),
                 "--corpus-fraction", "0.5", "--out", str(out), *SMALL_TRAIN])
    assert code == 0
    summary = json.loads(open(out).readline())["summary"]
    assert summary["corpus_fraction"] == 0.5


def _fixture_checkpoint(tmp_path):
    params = retriever.init_parameters(6, 8, seed=1)  # d_e matches the fixtures
    config = trainer.TrainConfig(hidden_size=6, train_corpus_size=5,
                                 train_problem_count=5, validation_size=5)
    path = tmp_path / "ckpt.rtck"
    trainer.save_params(path, params, config)
    return path, params


def test_build_index_and_export_latents(tmp_path, data_dir, capsys):
    ckpt, params = _fixture_checkpoint(tmp_path)
    corpus_args = ["--corpus", f"{data_dir}/tiny_gsm8k.jsonl",
                   "--corpus-embeddings", f"{data_dir}/tiny_gsm8k.rteb"]

    index_path = tmp_path / "index.rtck"
    assert main(["build-index", "--checkpoint", str(ckpt), *corpus_args,
                 "--version", "4", "--out", str(index_path)]) == 0
    assert "5 rows of dimension 6" in capsys.readouterr().out

    from reticl import index as index_mod

    tc = index_mod.load_cache(index_path, expected_version=4)
    emb, ids = tensorio.read_embedding_file(f"{data_dir}/tiny_gsm8k.rteb")
    expected = emb.astype(np.float64) @ np.asarray(params.W_a, dtype=np.float64).T
    assert np.allclose(tc.rows, expected, atol=1e-5)

    latents_path = tmp_path / "latents.rteb"
    assert main(["export-latents", "--checkpoint", str(ckpt), *corpus_args,
                 "--out", str(latents_path)]) == 0
    rows, row_ids = tensorio.read_embedding_file(latents_path)
    assert row_ids == ids
    assert np.allclose(rows, expected, atol=1e-5)


def test_cli_error_paths(tmp_path, capsys):
    # unknown config key: exit code 2 with a message on stderr
    assert main(["train", "--run-dir", str(tmp_path / "r"), "--set", "nope.key=1"]) == 2
    assert "error:" in capsys.readouterr().err
    # dataset env without files
    assert main(["train", "--run-dir", str(tmp_path / "r2"), "--set", "env=mock"]) == 2
    # missing checkpoint file
    assert main(["eval", "--method", "reticl", "--checkpoint",
                 str(tmp_path / "missing.rtck"), *SMALL_TRAIN]) in (1, 2)
