"""Command-line front end: reproducible experiment runs from JSON configs.

Seven subcommands cover the pipeline: build-vocab, train, infer-logits,
distill, eval, bench, param-count.  Configuration is a flat JSON object
with dotted keys ("model.n_layers": 3); repeatable --set KEY=VALUE flags
override the file.  Every run writes the merged effective config into its
output directory, so a run can be reproduced from its artifacts alone.

Exit codes: 0 ok, 2 usage, 3 io, 4 config, 5 numeric (NaN/Inf abort).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .numerics import NonFiniteError
from .models import (
    CheckpointError,
    ModelConfig,
    init_model,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .text import (
    CsvSchema,
    Vocabulary,
    build_vocab,
    encode_dataset,
    load_csv_dataset,
    load_glove,
    stratified_sample,
    tokenize,
)
from . import bench as bench_mod
from . import distill as distill_mod
from . import synthetic

__all__ = ["ConfigError", "main"]

OUT_ROOT_ENV = "BLENDCNN_OUT_ROOT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5


class ConfigError(Exception):
    """Bad key, bad value, or config/artifact mismatch."""


_DEFAULTS = {
    "model.kind": "blendcnn",
    "model.n_classes": 4,
    "model.seq_len": 128,
    "model.vocab_size": 0,  # 0 = size of the loaded vocabulary
    "model.embed_dim": 100,
    "model.n_layers": 3,
    "model.n_channels": 100,
    "model.kernel_width": 5,
    "model.kernel_widths": [3, 5, 7],
    "model.dense_width": 100,
    "model.dropout": 0.5,
    "train.mode": "direct_ce",
    "train.alpha": 0.0,
    "train.batch_size": 32,
    "train.epochs": 10,
    "train.seed": 0,
    "train.lr": 1e-3,
    "train.unlabeled_ratio": 10.0,
    "data.train_csv": None,
    "data.test_csv": None,
    "data.eval_csv": None,
    "data.input_csv": None,
    "data.unlabeled_csv": None,
    "data.logits": None,
    "data.checkpoint": None,
    "data.vocab": None,
    "data.embeddings": None,
    "data.vocab_cap": 20000,
    "data.label_col": 0,
    "data.text_cols": [1, 2],
    "data.label_base": 1,
    "data.labeled_per_class": 0,  # 0 = keep every row
    "data.split_seed": 17,
    "bench.n_samples": 1000,
    "bench.batch_size": 32,
    "bench.repetitions": 5,
    "bench.warmup_batches": 2,
    "bench.seed": 0,
}


def load_config(config_path, overrides) -> dict:
    """Defaults <- JSON file <- --set flags, validating every key."""
    cfg = dict(_DEFAULTS)
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{config_path}: not valid JSON ({exc})") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{config_path}: top level must be a JSON object")
        for key, value in loaded.items():
            if key not in cfg:
                raise ConfigError(f"{config_path}: unknown config key {key!r}")
            cfg[key] = value
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
        if key not in cfg:
            raise ConfigError(f"--set: unknown config key {key!r}")
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw  # bare strings need no quotes
    return cfg


def _require(cfg, key):
    if cfg[key] in (None, ""):
        raise ConfigError(f"{key} is required for this command")
    return cfg[key]


def _out_dir(args) -> str:
    if args.out:
        path = args.out
    else:
        root = os.environ.get(OUT_ROOT_ENV, "runs")
        path = os.path.join(root, args.command)
    os.makedirs(path, exist_ok=True)
    return path


def _echo_config(cfg, out_dir) -> None:
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _schema(cfg) -> CsvSchema:
    return CsvSchema(
        label_col=int(cfg["data.label_col"]),
        text_cols=tuple(int(c) for c in cfg["data.text_cols"]),
        label_base=int(cfg["data.label_base"]),
    )


def _model_config(cfg, vocab: Vocabulary = None) -> ModelConfig:
    vocab_size = int(cfg["model.vocab_size"])
    if vocab_size == 0:
        if vocab is None:
            raise ConfigError(
                "model.vocab_size is 0 (infer from vocabulary) but this command "
                "loads no vocabulary; set it explicitly"
            )
        vocab_size = len(vocab)
    elif vocab is not None and vocab_size != len(vocab):
        raise ConfigError(
            f"model.vocab_size {vocab_size} does not match the vocabulary "
            f"({len(vocab)} tokens)"
        )
    try:
        return ModelConfig(
            kind=cfg["model.kind"],
            n_classes=int(cfg["model.n_classes"]),
            seq_len=int(cfg["model.seq_len"]),
            vocab_size=vocab_size,
            embed_dim=int(cfg["model.embed_dim"]),
            n_layers=int(cfg["model.n_layers"]),
            n_channels=int(cfg["model.n_channels"]),
            kernel_width=int(cfg["model.kernel_width"]),
            kernel_widths=tuple(int(w) for w in cfg["model.kernel_widths"]),
            dense_width=int(cfg["model.dense_width"]),
            dropout=float(cfg["model.dropout"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _train_config(cfg, mode=None) -> distill_mod.TrainConfig:
    try:
        return distill_mod.TrainConfig(
            mode=mode or cfg["train.mode"],
            alpha=float(cfg["train.alpha"]),
            batch_size=int(cfg["train.batch_size"]),
            epochs=int(cfg["train.epochs"]),
            seed=int(cfg["train.seed"]),
            lr=float(cfg["train.lr"]),
            unlabeled_ratio=float(cfg["train.unlabeled_ratio"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_vocab(cfg) -> Vocabulary:
    return Vocabulary.load(_require(cfg, "data.vocab"))


def _checkpoint_for(cfg, vocab):
    state = load_checkpoint(_require(cfg, "data.checkpoint"))
    if state.config.vocab_size != len(vocab):
        raise ConfigError(
            f"checkpoint was trained with vocab_size {state.config.vocab_size}, "
            f"but the loaded vocabulary has {len(vocab)} tokens"
        )
    return state


def _encoded(cfg, csv_key, vocab, seq_len, drop_labels=False):
    rows = load_csv_dataset(_require(cfg, csv_key), _schema(cfg))
    if drop_labels:
        rows = [(i, t, None) for i, t, _ in rows]
    return encode_dataset(rows, vocab, seq_len)


def _maybe_eval_set(cfg, vocab, seq_len):
    if cfg["data.eval_csv"]:
        rows = load_csv_dataset(cfg["data.eval_csv"], _schema(cfg))
        return encode_dataset(rows, vocab, seq_len)
    return None


# ---------------------------------------------------------------------------
# subcommands


def _cmd_build_vocab(cfg, out_dir) -> int:
    rows = load_csv_dataset(_require(cfg, "data.train_csv"), _schema(cfg))
    vocab = build_vocab((tokenize(text) for _, text, _ in rows),
                        cap=int(cfg["data.vocab_cap"]))
    path = os.path.join(out_dir, "vocab.tsv")
    vocab.save(path)
    print(f"vocabulary: {len(vocab)} tokens ({len(rows)} rows) -> {path}")
    return EXIT_OK


def _finish_training(state, ledger, out_dir) -> None:
    save_checkpoint(state, os.path.join(out_dir, "model.ckpt"))
    ledger.save(os.path.join(out_dir, "ledger.json"))
    last = ledger.entries[-1]
    note = f"epoch {last.epoch}: loss {last.train_loss:.6f}"
    if last.eval_accuracy is not None:
        note += f", eval accuracy {last.eval_accuracy:.4f}"
    print(f"{note} -> {out_dir}")


def _cmd_train(cfg, out_dir) -> int:
    vocab = _load_vocab(cfg)
    model_cfg = _model_config(cfg, vocab)
    train_cfg = _train_config(cfg, mode=distill_mod.DIRECT_CE)
    rows = load_csv_dataset(_require(cfg, "data.train_csv"), _schema(cfg))
    per_class = int(cfg["data.labeled_per_class"])
    if per_class > 0:
        rows, _ = stratified_sample(rows, per_class, int(cfg["data.split_seed"]))
    examples = encode_dataset(rows, vocab, model_cfg.seq_len)
    embeddings = None
    if cfg["data.embeddings"]:
        embeddings = load_glove(cfg["data.embeddings"], vocab,
                                embed_dim=model_cfg.embed_dim, seed=train_cfg.seed)
    state = init_model(model_cfg, train_cfg.seed, embeddings=embeddings)
    state, ledger = distill_mod.train_direct(
        state, examples, train_cfg,
        eval_set=_maybe_eval_set(cfg, vocab, model_cfg.seq_len),
        checkpoint_dir=os.path.join(out_dir, "checkpoints"),
    )
    _finish_training(state, ledger, out_dir)
    return EXIT_OK


def _cmd_infer_logits(cfg, out_dir) -> int:
    vocab = _load_vocab(cfg)
    state = _checkpoint_for(cfg, vocab)
    examples = _encoded(cfg, "data.input_csv", vocab, state.config.seq_len)
    records = distill_mod.infer_logits(state, examples,
                                       batch_size=int(cfg["train.batch_size"]))
    path = os.path.join(out_dir, "logits.jsonl")
    distill_mod.write_logit_records(path, records)
    print(f"logits for {len(records)} examples -> {path}")
    return EXIT_OK


def _cmd_distill(cfg, out_dir) -> int:
    vocab = _load_vocab(cfg)
    model_cfg = _model_config(cfg, vocab)
    mode = cfg["train.mode"]
    if mode == distill_mod.DIRECT_CE:
        mode = distill_mod.DISTILL_MAE  # distill never runs plain CE
    train_cfg = _train_config(cfg, mode=mode)
    records = distill_mod.read_logit_records(_require(cfg, "data.logits"))

    rows = load_csv_dataset(_require(cfg, "data.train_csv"), _schema(cfg))
    per_class = int(cfg["data.labeled_per_class"])
    if per_class > 0:
        rows, _ = stratified_sample(rows, per_class, int(cfg["data.split_seed"]))
    labeled = encode_dataset(rows, vocab, model_cfg.seq_len)
    unlabeled = []
    if cfg["data.unlabeled_csv"]:
        unlabeled = _encoded(cfg, "data.unlabeled_csv", vocab, model_cfg.seq_len,
                             drop_labels=True)
    labeled = distill_mod.attach_teacher_logits(labeled, records)
    unlabeled = distill_mod.attach_teacher_logits(unlabeled, records)

    state = init_model(model_cfg, train_cfg.seed)
    state, ledger = distill_mod.train_distill(
        state, labeled, unlabeled, train_cfg,
        eval_set=_maybe_eval_set(cfg, vocab, model_cfg.seq_len),
        checkpoint_dir=os.path.join(out_dir, "checkpoints"),
    )
    _finish_training(state, ledger, out_dir)
    return EXIT_OK


def _cmd_eval(cfg, out_dir) -> int:
    vocab = _load_vocab(cfg)
    state = _checkpoint_for(cfg, vocab)
    test = _encoded(cfg, "data.test_csv", vocab, state.config.seq_len)
    result = distill_mod.evaluate(state, test, batch_size=int(cfg["train.batch_size"]))
    pred_path = os.path.join(out_dir, "predictions.csv")
    distill_mod.dump_predictions(pred_path, state, test,
                                 batch_size=int(cfg["train.batch_size"]))
    with open(os.path.join(out_dir, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "accuracy": result.accuracy,
                "n_examples": result.n_examples,
                "confusion": result.confusion.tolist(),
            },
            fh, indent=2,
        )
        fh.write("\n")
    print(f"accuracy {result.accuracy:.4f} on {result.n_examples} examples -> {out_dir}")
    return EXIT_OK


def _bench_dataset(cfg, n_needed):
    """Rows + vocabulary for timing: supplied CSV or a synthetic stand-in."""
    if cfg["data.test_csv"]:
        vocab = _load_vocab(cfg)
        rows = load_csv_dataset(cfg["data.test_csv"], _schema(cfg))
        return rows, vocab
    n_classes = int(cfg["model.n_classes"])
    spec = synthetic.CorpusSpec(n_classes=n_classes)
    docs = synthetic.generate_docs(-(-n_needed // n_classes), int(cfg["bench.seed"]), spec)
    rows = synthetic.docs_to_rows(docs)
    vocab = build_vocab((tokenize(t) for _, t, _ in rows), cap=int(cfg["data.vocab_cap"]))
    return rows, vocab


def _cmd_bench(cfg, out_dir) -> int:
    bench_cfg = bench_mod.ThroughputConfig(
        n_samples=int(cfg["bench.n_samples"]),
        batch_size=int(cfg["bench.batch_size"]),
        repetitions=int(cfg["bench.repetitions"]),
        warmup_batches=int(cfg["bench.warmup_batches"]),
        seed=int(cfg["bench.seed"]),
    )
    rows, vocab = _bench_dataset(cfg, bench_cfg.n_samples)

    if cfg["data.checkpoint"]:
        states = [_checkpoint_for(cfg, vocab)]
    else:
        base = _model_config(cfg, vocab)
        trio = [
            ModelConfig.from_dict({**base.to_dict(), "kind": "blendcnn", "n_layers": 3}),
            ModelConfig.from_dict({**base.to_dict(), "kind": "blendcnn", "n_layers": 8}),
            ModelConfig.from_dict({**base.to_dict(), "kind": "kimcnn"}),
        ]
        states = [init_model(mc, int(cfg["bench.seed"])) for mc in trio]

    dataset = encode_dataset(rows, vocab, states[0].config.seq_len)
    results = bench_mod.measure_many(states, dataset, bench_cfg)
    counts = {
        bench_mod.model_display_name(s.config): param_count(s.config)[0] for s in states
    }
    rep = bench_mod.report(results, counts, include_reference_only=True)
    rep.save(text_path=os.path.join(out_dir, "bench.txt"),
             csv_path=os.path.join(out_dir, "bench.csv"))
    print(rep.text, end="")
    print(f"reports -> {out_dir}")
    return EXIT_OK


def _cmd_param_count(cfg, out_dir) -> int:
    model_cfg = _model_config(cfg)
    total, breakdown = param_count(model_cfg)
    name = bench_mod.model_display_name(model_cfg)
    ref = bench_mod.PAPER_REPORTED.get(name)
    for block, n in breakdown.items():
        print(f"{block:>12}: {n:,}")
    print(f"{'total':>12}: {total:,}")
    if ref is not None:
        print(f"{'paper-reported total for ' + name:>12}: {ref[0]:,}")
    with open(os.path.join(out_dir, "param_count.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "model": name,
                "total": total,
                "breakdown": breakdown,
                "paper_reported_total": ref[0] if ref else None,
            },
            fh, indent=2,
        )
        fh.write("\n")
    return EXIT_OK


_COMMANDS = {
    "build-vocab": _cmd_build_vocab,
    "train": _cmd_train,
    "infer-logits": _cmd_infer_logits,
    "distill": _cmd_distill,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "param-count": _cmd_param_count,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blendcnn",
        description="Train, distill, and benchmark compact convolutional text classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="JSON config file with flat dotted keys")
        p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable; wins over the file)")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ROOT_ENV}/<command>)")
        p.add_argument("--seed", type=int, help="shorthand for train.seed and bench.seed")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg["train.seed"] = args.seed
            cfg["bench.seed"] = args.seed
        out_dir = _out_dir(args)
        _echo_config(cfg, out_dir)
        return _COMMANDS[args.command](cfg, out_dir)
    except NonFiniteError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        missing = exc.filename if exc.filename else exc
        print(f"io error: missing input {missing}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
