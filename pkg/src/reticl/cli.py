"""Command-line surface for the experiment lifecycle.

Subcommands: train, eval, baseline, build-index, export-latents,
export-embeddings-schema. Configuration comes from a JSON file with
``--set key=value`` overrides on top (command line > file > defaults); the
effective config is echoed into the run manifest.
"""

import argparse
import dataclasses
import hashlib
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, index, synthetic, tensorio, trainer
from .corpus import Corpus, attach_embeddings, load_dataset, make_splits
from .environment import LLMClient, LLMEnvironment, MockClient
from .rng import child_rng
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}

DEFAULT_CONFIG = {
    "train": {},
    "env": {"kind": "synthetic", "mock_responses": None},
    "data": {
        "dataset": None,
        "format": "gsm8k",
        "embeddings": None,
        "validation_dataset": None,
        "validation_embeddings": None,
        "synthetic": {
            "n_categories": 4,
            "corpus_size": 50,
            "n_train_problems": 500,
            "n_validation": 100,
        },
    },
}


def _deep_update(base, overrides):
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _parse_set(entry):
    if "=" not in entry:
        raise ConfigError(f"--set expects key=value, got {entry!r}")
    key, raw = entry.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(config, key, value):
    if key == "env":
        config["env"]["kind"] = value
        return
    if key in _TRAIN_KEYS:
        config["train"][key] = value
        return
    parts = key.split(".")
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
    if parts[-1] not in node and parts[0] not in ("env", "data", "train"):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def load_config(config_path, overrides):
    config = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if config_path:
        with open(config_path) as f:
            _deep_update(config, json.load(f))
    for entry in overrides or []:
        key, value = _parse_set(entry)
        _apply_override(config, key, value)
    unknown = set(config["train"]) - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown train config key(s): {sorted(unknown)}")
    try:
        train_config = TrainConfig(**config["train"])
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return config, train_config


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _source_revision():
    try:
        return subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, check=True,
            cwd=Path(__file__).parent,
        ).stdout.strip()
    except (subprocess.CalledProcessError, FileNotFoundError):
        return None


def write_manifest(run_dir, config, train_config, data_files, outputs, started, finished):
    manifest = {
        "config": config,
        "effective_train_config": train_config.to_dict(),
        "seed": train_config.seed,
        "dataset_hashes": {str(p): _file_hash(p) for p in data_files if p},
        "source_revision": _source_revision(),
        "started": started,
        "finished": finished,
        "outputs": [str(p) for p in outputs],
    }
    path = Path(run_dir) / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _build_env(config, train_config):
    kind = config["env"]["kind"]
    if kind == "synthetic":
        synth = config["data"]["synthetic"]
        env, splits = synthetic.make_synthetic_task(
            train_config.seed,
            n_categories=synth["n_categories"],
            corpus_size=synth["corpus_size"],
            n_train_problems=synth["n_train_problems"],
            n_validation=synth["n_validation"],
            horizon=train_config.horizon,
        )
        return env, splits
    if kind == "mock":
        path = config["env"]["mock_responses"]
        if not path:
            raise ConfigError("mock env requires env.mock_responses")
        return LLMEnvironment(MockClient.from_file(path)), None
    if kind == "llm":
        return LLMEnvironment(LLMClient(max_in_flight=train_config.batch_size)), None
    raise ConfigError(f"unknown env kind {kind!r}")


def _load_embedded(dataset_path, format, embeddings_path):
    if not dataset_path or not embeddings_path:
        raise ConfigError("dataset and embeddings paths are required")
    for p in (dataset_path, embeddings_path):
        if not Path(p).exists():
            raise ConfigError(f"missing input file: {p}")
    return attach_embeddings(load_dataset(dataset_path, format), embeddings_path)


def _make_dataset_splits(config, train_config):
    data = config["data"]
    train_examples = _load_embedded(data["dataset"], data["format"], data["embeddings"])
    validation = None
    if data.get("validation_dataset"):
        validation = _load_embedded(
            data["validation_dataset"], data["format"], data["validation_embeddings"]
        )
    return make_splits(
        train_examples,
        validation,
        train_problem_count=train_config.train_problem_count,
        train_corpus_size=train_config.train_corpus_size,
        validation_size=train_config.validation_size,
        seed=train_config.seed,
    )


def cmd_train(args):
    config, train_config = load_config(args.config, args.set)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    env, splits = _build_env(config, train_config)
    data_files = []
    if splits is None:
        splits = _make_dataset_splits(config, train_config)
        data_files = [config["data"]["dataset"], config["data"]["embeddings"]]
    result = trainer.train(train_config, splits, env, args.run_dir)
    finished = time.strftime("%Y-%m-%dT%H:%M:%S")
    outputs = [
        result.best_checkpoint, result.last_checkpoint,
        Path(args.run_dir) / "metrics.jsonl", Path(args.run_dir) / "episodes.jsonl",
    ]
    write_manifest(args.run_dir, config, train_config, data_files, outputs, started, finished)
    best = result.best_val_accuracy
    print(f"best validation accuracy {best:.4f}; checkpoints in {args.run_dir}")
    return 0


def _episode_accuracy(env, problems, corpus, picks_per_problem):
    pairs = [
        (problem, [corpus.examples[i] for i in picks])
        for problem, picks in zip(problems, picks_per_problem)
    ]
    outcomes = env.episode_batch(pairs)
    records = []
    for (problem, picks), (reward, text) in zip(pairs, outcomes):
        records.append({
            "problem_id": problem.id,
            "selected_ids": [ex.id for ex in picks],
            "correct": reward.correct,
            "reward": dataclasses.asdict(reward),
            "generated_text": text,
        })
    accuracy = float(np.mean([r["correct"] for r in records]))
    return accuracy, records


def cmd_eval(args):
    config, train_config = load_config(args.config, args.set)
    env, synth_splits = _build_env(config, train_config)
    data = config["data"]

    if synth_splits is not None:
        problems = list(synth_splits.validation_problems)
        corpus = synth_splits.inference_corpus
    else:
        problems = _load_embedded(args.problems or data["dataset"], data["format"],
                                  args.problem_embeddings or data["embeddings"])
        corpus_examples = _load_embedded(args.corpus, data["format"], args.corpus_embeddings)
        corpus = Corpus.from_examples(corpus_examples)

    if args.limit:
        problems = problems[: args.limit]

    from .corpus import subsample_corpus

    eval_corpus = subsample_corpus(corpus, args.corpus_fraction, train_config.seed,
                                   min_size=train_config.horizon)

    all_records = []
    accuracies = []
    if args.method == "reticl":
        params, ckpt_config = trainer.load_params(args.checkpoint)
        report = trainer.evaluate(params, problems, corpus, env, ckpt_config,
                                  corpus_fraction=args.corpus_fraction,
                                  seed=train_config.seed)
        accuracies = [report.accuracy]
        all_records = report.records
    elif args.method == "random":
        for s in range(args.seeds):
            rng = child_rng(train_config.seed, "baseline", s)
            picks = [
                baselines.random_select(eval_corpus, train_config.horizon, rng)
                for _ in problems
            ]
            accuracy, records = _episode_accuracy(env, problems, eval_corpus, picks)
            accuracies.append(accuracy)
            all_records.extend(records)
    elif args.method == "knn":
        statement_matrix, _ = tensorio.read_embedding_file(args.corpus_problem_embeddings)
        sub_ids = {ex.id for ex in eval_corpus.examples}
        keep = [i for i, ex in enumerate(corpus.examples) if ex.id in sub_ids]
        statement_matrix = statement_matrix[keep]
        problem_statements, _ = tensorio.read_embedding_file(args.problem_statement_embeddings)
        picks = [
            baselines.knn_select(problem_statements[i], statement_matrix, train_config.horizon)
            for i in range(len(problems))
        ]
        accuracy, all_records = _episode_accuracy(env, problems, eval_corpus, picks)
        accuracies = [accuracy]
    elif args.method == "topk":
        params, _ = trainer.load_params(args.checkpoint)
        picks = []
        for problem in problems:
            scorer = baselines.initial_policy_scorer(params, problem.embedding, eval_corpus)
            picks.append(
                baselines.topk_independent_select(scorer, eval_corpus, train_config.horizon)
            )
        accuracy, all_records = _episode_accuracy(env, problems, eval_corpus, picks)
        accuracies = [accuracy]
    elif args.method == "exhaustive":
        solved_count = 0
        for problem in problems:
            solved, attempts, failures = baselines.exhaustive_eval(
                problem, eval_corpus, env, corpus_cap=args.corpus_cap
            )
            solved_count += int(solved)
            all_records.append({
                "problem_id": problem.id, "correct": solved,
                "attempts": attempts, "env_failures": failures,
            })
        accuracies = [solved_count / len(problems)]
    else:
        raise ConfigError(f"unknown method {args.method!r}")

    summary = {
        "method": args.method,
        "corpus_fraction": args.corpus_fraction,
        "accuracy_per_seed": accuracies,
        "accuracy": float(np.mean(accuracies)),
        "problems": len(problems),
    }
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as f:
            f.write(json.dumps({"summary": summary}) + "\n")
            for record in all_records:
                f.write(json.dumps(record) + "\n")
    print(f"method={args.method}  accuracy={summary['accuracy']:.4f}  "
          f"problems={len(problems)}  corpus_fraction={args.corpus_fraction}")
    return 0


def cmd_build_index(args):
    params, _ = trainer.load_params(args.checkpoint)
    config, _ = load_config(args.config, args.set)
    data = config["data"]
    corpus = Corpus.from_examples(_load_embedded(args.corpus, data["format"], args.corpus_embeddings))
    tc = index.build(params.W_a, corpus, version=args.version)
    index.save_cache(args.out, tc)
    print(f"wrote index with {tc.rows.shape[0]} rows of dimension {tc.rows.shape[1]} to {args.out}")
    return 0


def cmd_export_latents(args):
    params, _ = trainer.load_params(args.checkpoint)
    config, _ = load_config(args.config, args.set)
    data = config["data"]
    corpus = Corpus.from_examples(_load_embedded(args.corpus, data["format"], args.corpus_embeddings))
    tc = index.build(params.W_a, corpus)
    tensorio.write_embedding_file(args.out, tc.rows.astype(np.float32),
                                  [ex.id for ex in corpus.examples])
    print(f"wrote {tc.rows.shape[0]} latent rows of dimension {tc.rows.shape[1]} to {args.out}")
    return 0


EMBEDDING_SCHEMA = {
    "file": {
        "magic": "RTEB",
        "version": {"type": "u32 little-endian", "value": 1},
        "rows": "u32 little-endian",
        "dimension": "u32 little-endian",
        "data": "rows * dimension float32 little-endian, row-major",
    },
    "sidecar": "<path>.ids.json: JSON array of example ids in row order",
    "constraints": ["rows are unit L2 norm", "bit-exact round trip"],
}


def cmd_export_embeddings_schema(args):
    print(json.dumps(EMBEDDING_SCHEMA, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="reticl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")

    p = sub.add_parser("train", help="train the retriever policy")
    add_config_args(p)
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_train)

    for name in ("eval", "baseline"):
        p = sub.add_parser(name, help="evaluate a selection method")
        add_config_args(p)
        p.add_argument("--method", required=(name == "baseline"), default="reticl",
                       choices=["reticl", "random", "knn", "topk", "exhaustive"])
        p.add_argument("--checkpoint")
        p.add_argument("--problems", help="problems dataset file")
        p.add_argument("--problem-embeddings")
        p.add_argument("--problem-statement-embeddings",
                       help="problem-statement-only channel, used by knn")
        p.add_argument("--corpus", help="corpus dataset file")
        p.add_argument("--corpus-embeddings")
        p.add_argument("--corpus-problem-embeddings",
                       help="problem-statement-only channel for the corpus, used by knn")
        p.add_argument("--corpus-fraction", type=float, default=1.0)
        p.add_argument("--corpus-cap", type=int, default=100)
        p.add_argument("--seeds", type=int, default=1)
        p.add_argument("--limit", type=int, default=0)
        p.add_argument("--out", help="write line-delimited JSON report here")
        p.set_defaults(func=cmd_eval)

    p = sub.add_parser("build-index", help="precompute the bilinear-transformed corpus")
    add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--corpus-embeddings", required=True)
    p.add_argument("--version", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("export-latents", help="write W_a e rows for every corpus example")
    add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--corpus-embeddings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_latents)

    p = sub.add_parser("export-embeddings-schema",
                       help="print the embedding file format description")
    p.set_defaults(func=cmd_export_embeddings_schema)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
