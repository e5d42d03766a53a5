"""Command-line entry point: dataset building, synthetic generation,
single-task pre-finetuning, multi-task training, evaluation, benchmarking.

Configuration comes from a plain-text "key = value" file; command-line flags
override file keys, which override built-in defaults. Every run writes its
fully resolved configuration next to its outputs. Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import data as data_mod
from . import initializers as init_mod
from . import metrics as metrics_mod
from .data import DataError
from .encoder import EncoderConfig
from .model import ModelVariant, MultiTaskModel, specs_from_task_data
from .trainer import NumericError, TrainConfig, aggregate_runs_median, run_training


class UsageError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "encoder.num_layers": 2,
    "encoder.hidden_dim": 64,
    "encoder.num_heads": 4,
    "encoder.ffn_dim": 256,
    "encoder.max_positions": 128,
    "encoder.dropout": 0.1,
    "model.variant": "mtop",
    "model.prompt_len": 2,
    "model.shared_prompt_len": 0,
    "init.prompt": "rd",
    "init.pooler": "rd",
    "train.batch_size": 16,
    "train.epochs": 20,
    "train.learning_rate": 1e-5,
    "train.warmup_fraction": 0.10,
    "train.eval_batch_size": 64,
    "data.max_len": 128,
    "data.vocab_size": 30000,
}


def worker_count():
    raw = os.environ.get("MTOP_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        raise UsageError(f"MTOP_THREADS must be an integer, got {raw!r}") from None


def parse_config_file(path):
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                values[key] = value
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    return values


def resolve_config(file_values=None, overrides=None):
    """Merge defaults <- config file <- flag overrides; reject unknown keys."""
    resolved = dict(DEFAULTS)
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            if value is None:
                continue
            kind = type(DEFAULTS[key])
            try:
                resolved[key] = kind(value) if kind is not str else str(value)
            except ValueError:
                raise UsageError(
                    f"config key {key!r} expects {kind.__name__}, got {value!r}"
                ) from None
    return resolved


def write_resolved_config(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved")
    with open(path, "w", encoding="utf-8") as f:
        for key in sorted(config):
            f.write(f"{key} = {config[key]}\n")
    return path


def encoder_config(config, vocab_size):
    return EncoderConfig(
        vocab_size=vocab_size,
        num_layers=config["encoder.num_layers"],
        hidden_dim=config["encoder.hidden_dim"],
        num_heads=config["encoder.num_heads"],
        ffn_dim=config["encoder.ffn_dim"],
        max_positions=config["encoder.max_positions"],
        dropout_rate=config["encoder.dropout"],
    )


def train_config(config, seed):
    return TrainConfig(
        epochs=config["train.epochs"],
        batch_size=config["train.batch_size"],
        learning_rate=config["train.learning_rate"],
        warmup_fraction=config["train.warmup_fraction"],
        eval_batch_size=config["train.eval_batch_size"],
        seed=seed,
    )


def load_task_data(config, data_dir):
    tasks = data_mod.read_task_splits(data_dir)
    vocab = data_mod.vocab_from_tasks(tasks, max_size=config["data.vocab_size"])
    task_data = data_mod.encode_tasks(tasks, vocab, max_len=config["data.max_len"])
    return tasks, vocab, task_data


def build_model(config, vocab, task_data, seed, variant=None):
    specs = specs_from_task_data(task_data)
    return MultiTaskModel(
        encoder_config(config, len(vocab)), specs,
        variant=variant or config["model.variant"],
        prompt_len=config["model.prompt_len"],
        shared_prompt_len=config["model.shared_prompt_len"],
        seed=seed)


# ----- subcommands ----------------------------------------------------------


def cmd_build_nhc(args):
    config = resolve_config(_file_values(args), {"seed": args.seed})
    records = data_mod.load_news_file(args.input)
    tasks = data_mod.build_nhc(records, seed=config["seed"], workers=worker_count())
    data_mod.write_task_splits(tasks, args.out, seed=config["seed"])
    write_resolved_config(config, args.out)
    total = sum(len(t.train) + len(t.eval) for t in tasks)
    print(f"wrote {len(tasks)} tasks, {total} examples to {args.out}")
    return 0


def cmd_synth(args):
    config = resolve_config(_file_values(args), {"seed": args.seed})
    tasks = data_mod.generate_synthetic(
        args.tasks, args.examples_per_task, conflict_mode=args.conflict,
        seed=config["seed"])
    data_mod.write_task_splits(tasks, args.out, seed=config["seed"])
    write_resolved_config(config, args.out)
    total = sum(len(t.train) + len(t.eval) for t in tasks)
    print(f"wrote {len(tasks)} synthetic tasks ({total} examples) to {args.out}")
    return 0


def cmd_pretrain_single(args):
    config = resolve_config(_file_values(args), {
        "seed": args.seed, "train.epochs": args.epochs,
        "train.learning_rate": args.learning_rate})
    _, vocab, task_data = load_task_data(config, args.data)
    model = build_model(config, vocab, task_data, config["seed"])
    os.makedirs(args.out, exist_ok=True)
    artifacts = []
    for spec in model.task_specs:
        artifact = init_mod.pre_finetune_single_task(
            spec, model.encoder,
            train_config(config, config["seed"] + spec.index),
            prompt_len=config["model.prompt_len"],
            init_seed=config["seed"] + spec.index)
        artifacts.append(artifact)
        print(f"task {spec.index} ({spec.name}): artifact trained")
    init_mod.save_artifacts(artifacts, args.out)
    write_resolved_config(config, args.out)
    print(f"wrote {len(artifacts)} artifacts to {args.out}")
    return 0


def _single_train_run(config, data_dir, out_dir, seed, variant, artifacts_dir):
    _, vocab, task_data = load_task_data(config, data_dir)
    model = build_model(config, vocab, task_data, seed, variant=variant)

    init_spec = init_mod.InitSpec(prompt_init=config["init.prompt"],
                                  pooler_init=config["init.pooler"], seed=seed)
    needs_artifacts = "st" in (init_spec.prompt_init, init_spec.pooler_init)
    artifacts = None
    if needs_artifacts:
        if artifacts_dir:
            artifacts = init_mod.load_artifacts(artifacts_dir)
        else:
            artifacts = [
                init_mod.pre_finetune_single_task(
                    spec, model.encoder, train_config(config, seed + spec.index),
                    prompt_len=config["model.prompt_len"],
                    init_seed=seed + spec.index)
                for spec in model.task_specs
            ]
    init_mod.initialize_model(model, init_spec, vocab=vocab, artifacts=artifacts)

    os.makedirs(out_dir, exist_ok=True)
    result = run_training(model, train_config(config, seed),
                          metrics_path=os.path.join(out_dir, "metrics.log"))
    with open(os.path.join(out_dir, "ckpt.best"), "wb") as f:
        f.write(result.best_bytes)
    best_model = MultiTaskModel.from_bytes(result.best_bytes)
    for spec, td in zip(best_model.task_specs, task_data):
        spec.data = td
    report = metrics_mod.evaluate(best_model, batch_size=config["train.eval_batch_size"])
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as f:
        f.write(metrics_mod.format_report(report, title=f"best checkpoint (epoch {result.best.epoch})"))
        f.write("\n")
    write_resolved_config({**config, "seed": seed}, out_dir)
    return {row.name: row.value for row in report.rows}


def cmd_train(args):
    overrides = {"seed": args.seed, "model.variant": args.variant,
                 "train.epochs": args.epochs,
                 "train.learning_rate": args.learning_rate,
                 "init.prompt": args.init_prompts, "init.pooler": args.init_poolers}
    config = resolve_config(_file_values(args), overrides)
    if args.runs > 1 and args.artifacts:
        raise UsageError("--artifacts only supports --runs 1: each run's seed "
                         "needs artifacts trained against its own backbone")
    os.makedirs(args.out, exist_ok=True)

    run_ids = list(range(args.runs))

    def one(r):
        return _single_train_run(
            config, args.data, os.path.join(args.out, f"run{r}"),
            config["seed"] + r, config["model.variant"], args.artifacts)

    workers = min(worker_count(), len(run_ids))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            run_metrics = list(pool.map(one, run_ids))
    else:
        run_metrics = [one(r) for r in run_ids]

    per_task, median_avg = aggregate_runs_median(run_metrics)
    summary = {"runs": args.runs, "per_task_median": per_task,
               "median_average": median_avg}
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    write_resolved_config(config, args.out)
    print(f"median average over {args.runs} run(s): {median_avg:.4f}")
    for name in sorted(per_task):
        print(f"  {name}: {per_task[name]:.4f}")
    return 0


def cmd_eval(args):
    config = resolve_config(_file_values(args), {"seed": args.seed})
    model = MultiTaskModel.load(args.ckpt)
    _, vocab, task_data = load_task_data(config, args.data)
    by_name = {td.name: td for td in task_data}
    for spec in model.task_specs:
        if spec.name not in by_name:
            raise DataError(f"checkpoint task {spec.name!r} missing from {args.data}")
        spec.data = by_name[spec.name]
    report = metrics_mod.evaluate(model, batch_size=config["train.eval_batch_size"])
    text = metrics_mod.format_report(report)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as f:
            f.write(text)
            f.write("\n")
        with open(os.path.join(args.out, "report.ndjson"), "w", encoding="utf-8") as f:
            for rec in metrics_mod.report_records(report):
                f.write(json.dumps(rec, sort_keys=True))
                f.write("\n")
        write_resolved_config(config, args.out)
    return 0


def cmd_bench(args):
    config = resolve_config(_file_values(args), {"seed": args.seed})
    variants = [ModelVariant.parse(v) for v in args.variants.split(",") if v]
    if not variants:
        raise UsageError("--variants needs at least one variant")
    rng = np.random.default_rng(config["seed"])
    vocab_size = config["data.vocab_size"]
    names = [f"t{i}" for i in range(args.tasks)]
    task_data = [data_mod.TaskData(n, 2, "accuracy", [], []) for n in names]
    base = build_model(config, _FixedVocab(vocab_size), task_data, config["seed"],
                       variant=variants[0])
    models = [(variants[0].value, base)]
    for v in variants[1:]:
        models.append((v.value, base.with_variant(v)))
    seqs = rng.integers(3, vocab_size, size=(args.batch_size, args.seq_len)).tolist()
    result = metrics_mod.bench(models, seqs, repetitions=args.reps)
    text = metrics_mod.format_bench(result)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "bench.txt"), "w", encoding="utf-8") as f:
            f.write(text)
            f.write("\n")
        write_resolved_config(config, args.out)
    return 0


class _FixedVocab:
    """Stand-in vocabulary of a given size for data-free benchmarking."""

    def __init__(self, size):
        self.size = size

    def __len__(self):
        return self.size


def _file_values(args):
    return parse_config_file(args.config) if getattr(args, "config", None) else {}


# ----- argument parsing -----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def make_parser():
    parser = _Parser(prog="mtop", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="root seed for all randomness (default 0)")

    p = sub.add_parser("build-nhc", help="build binary news-headline tasks")
    common(p)
    p.add_argument("--input", required=True, help="newline-delimited JSON news records")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_build_nhc)

    p = sub.add_parser("synth", help="generate synthetic keyword tasks")
    common(p)
    p.add_argument("--tasks", type=int, default=3, help="number of tasks (default 3)")
    p.add_argument("--examples-per-task", type=int, default=2000,
                   help="examples per task before the 80/20 split (default 2000)")
    p.add_argument("--conflict", action="store_true",
                   help="two tasks share a keyword with opposite labels")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("pretrain-single",
                       help="train per-task prompts/poolers against a frozen backbone")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (with manifest)")
    p.add_argument("--out", required=True, help="artifact output directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.set_defaults(fn=cmd_pretrain_single)

    p = sub.add_parser("train", help="train the multi-task model")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (with manifest)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--variant", default=None,
                   choices=[v.value for v in ModelVariant],
                   help="forward/gradient policy (default mtop)")
    p.add_argument("--runs", type=int, default=1,
                   help="repetitions with derived seeds (seed + run index)")
    p.add_argument("--epochs", type=int, default=None,
                   help="training epochs (default 20)")
    p.add_argument("--learning-rate", type=float, default=None,
                   help="peak learning rate (default 1e-5; desk-scale "
                        "backbones want ~1e-3)")
    p.add_argument("--init-prompts", default=None, choices=["rd", "tk", "st"],
                   help="prompt initialization (default rd)")
    p.add_argument("--init-poolers", default=None, choices=["rd", "st"],
                   help="pooler/head initialization (default rd)")
    p.add_argument("--artifacts", default=None,
                   help="directory of pre-trained single-task artifacts")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file to score")
    p.add_argument("--data", required=True, help="dataset directory (with manifest)")
    p.add_argument("--out", default=None, help="optional report output directory")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="compare inference cost across variants")
    common(p)
    p.add_argument("--variants", default="mtop,per_task_prompt",
                   help="comma-separated variants (default mtop,per_task_prompt)")
    p.add_argument("--tasks", type=int, default=8, help="task count (default 8)")
    p.add_argument("--batch-size", type=int, default=16, help="default 16")
    p.add_argument("--seq-len", type=int, default=32,
                   help="input token length (default 32)")
    p.add_argument("--reps", type=int, default=5,
                   help="timed repetitions after one warmup (default 5)")
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(fn=cmd_bench)

    return parser


def dispatch(argv):
    parser = make_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


def main(argv=None):
    try:
        return dispatch(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
