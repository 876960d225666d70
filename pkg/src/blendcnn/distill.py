"""Training loops and the teacher/student logit exchange.

Three training modes share one minibatch Adam loop:

    direct_ce    cross-entropy on hard labels
    distill_mae  mean absolute error between student and teacher logits
                 (never reads labels)
    mixed        alpha * CE(labeled rows) + (1 - alpha) * MAE(all rows)

Teacher logits travel as JSON Lines ({"id": ..., "logits": [...]}), one
record per example, so any larger model can stand in as the teacher.  The
bundled surrogate is an 8-layer BlendCNN trained on a bigger labeled pool.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    AdamConfig,
    adam_step,
    cross_entropy,
    cross_entropy_backward,
    mae_loss,
    mae_loss_backward,
)
from .models import ModelConfig, ModelState, backward, forward, init_model, save_checkpoint
from .text import Example

__all__ = [
    "LogitRecord",
    "TrainConfig",
    "EpochRecord",
    "RunLedger",
    "EvalResult",
    "config_hash",
    "infer_logits",
    "write_logit_records",
    "read_logit_records",
    "attach_teacher_logits",
    "train_direct",
    "train_distill",
    "evaluate",
    "dump_predictions",
    "recount_predictions",
    "make_surrogate_teacher",
    "ProtocolConfig",
    "ProtocolResult",
    "run_distillation_protocol",
]

DIRECT_CE = "direct_ce"
DISTILL_MAE = "distill_mae"
MIXED = "mixed"


@dataclass
class LogitRecord:
    """Per-example teacher output: the unit exchanged between models."""

    example_id: str
    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if not np.all(np.isfinite(self.logits)):
            raise ValueError(f"non-finite teacher logits for {self.example_id!r}")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = DIRECT_CE
    alpha: float = 0.0
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    lr: float = 1e-3
    unlabeled_ratio: float = 10.0

    def __post_init__(self):
        if self.mode not in (DIRECT_CE, DISTILL_MAE, MIXED):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode == DISTILL_MAE and self.alpha != 0.0:
            raise ValueError("distill_mae requires alpha = 0 (use mode='mixed' to blend)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "alpha": self.alpha,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "lr": self.lr,
            "unlabeled_ratio": self.unlabeled_ratio,
        }


def config_hash(model_config: ModelConfig, train_config: TrainConfig) -> str:
    blob = json.dumps(
        {"model": model_config.to_dict(), "train": train_config.to_dict()},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_accuracy: float = None
    wall_seconds: float = 0.0


@dataclass
class RunLedger:
    """Append-only per-epoch record of one training run."""

    seed: int
    config_hash: str
    entries: list = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.entries.append(record)

    @property
    def train_losses(self) -> list:
        return [e.train_loss for e in self.entries]

    @property
    def eval_accuracies(self) -> list:
        return [e.eval_accuracy for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_hash": self.config_hash,
            "epochs": [
                {
                    "epoch": e.epoch,
                    "train_loss": e.train_loss,
                    "eval_accuracy": e.eval_accuracy,
                    "wall_seconds": e.wall_seconds,
                }
                for e in self.entries
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


# ---------------------------------------------------------------------------
# batching helpers


def _stack_ids(examples):
    ids = np.stack([ex.token_ids for ex in examples])
    lens = np.array([ex.valid_len for ex in examples], dtype=np.int64)
    return ids, lens


def _stack_labels(examples):
    labels = np.empty(len(examples), dtype=np.int64)
    for i, ex in enumerate(examples):
        if ex.label is None:
            raise ValueError(f"unlabeled example encountered: id={ex.id!r}")
        labels[i] = ex.label
    return labels


def _stack_teacher_logits(examples, n_classes):
    out = np.empty((len(examples), n_classes), dtype=np.float64)
    for i, ex in enumerate(examples):
        if ex.teacher_logits is None:
            raise ValueError(f"missing teacher logits for example id={ex.id!r}")
        if ex.teacher_logits.shape != (n_classes,):
            raise ValueError(
                f"teacher logits for {ex.id!r} have shape {ex.teacher_logits.shape}, "
                f"expected ({n_classes},)"
            )
        out[i] = ex.teacher_logits
    return out


def _batch_slices(n, batch_size):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


# ---------------------------------------------------------------------------
# inference and the logit exchange


def infer_logits(state: ModelState, examples, batch_size: int = 32) -> list:
    """Eval-mode logits for every example, order preserved; deterministic."""
    records = []
    if not examples:
        return records
    ids, lens = _stack_ids(examples)
    for sl in _batch_slices(len(examples), batch_size):
        logits, _ = forward(state, ids[sl], lens[sl])
        for ex, row in zip(examples[sl], logits):
            records.append(LogitRecord(example_id=ex.id, logits=row.copy()))
    return records


def write_logit_records(path, records) -> None:
    """One JSON object per line: {"id": ..., "logits": [...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"id": rec.example_id, "logits": rec.logits.tolist()}))
            fh.write("\n")


def read_logit_records(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(LogitRecord(example_id=obj["id"], logits=obj["logits"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed logit record") from exc
    return records


def attach_teacher_logits(examples, records) -> list:
    """Return new Examples carrying teacher logits looked up by example id."""
    by_id = {rec.example_id: rec.logits for rec in records}
    out = []
    for ex in examples:
        if ex.id not in by_id:
            raise ValueError(f"missing teacher logits for example id={ex.id!r}")
        out.append(ex.with_teacher_logits(by_id[ex.id]))
    return out


# ---------------------------------------------------------------------------
# training loops


def _epoch_pass(state, ids, lens, rng, adam, batch_size, perm, batch_grad_fn):
    """One shuffled pass; batch_grad_fn(sl_indices, logits) -> (loss, dlogits)."""
    total_loss = 0.0
    for sl in _batch_slices(len(perm), batch_size):
        idx = perm[sl]
        logits, cache = forward(state, ids[idx], lens[idx], train=True, rng=rng)
        loss, dlogits = batch_grad_fn(idx, logits)
        backward(state, cache, dlogits)
        for p in state.parameters():
            adam_step(p, adam)
        state.bump_version()
        total_loss += loss * len(idx)
    return total_loss / len(perm)


def _run_epochs(state, ids, lens, config, batch_grad_fn, eval_set, checkpoint_dir):
    rng = np.random.default_rng(config.seed)
    adam = AdamConfig(lr=config.lr)
    ledger = RunLedger(seed=config.seed, config_hash=config_hash(state.config, config))
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        perm = rng.permutation(len(lens))
        mean_loss = _epoch_pass(
            state, ids, lens, rng, adam, config.batch_size, perm, batch_grad_fn
        )
        accuracy = None
        if eval_set is not None:
            accuracy = evaluate(state, eval_set, batch_size=config.batch_size).accuracy
        wall = time.perf_counter() - start
        ledger.append(EpochRecord(epoch, mean_loss, accuracy, wall))
        if checkpoint_dir is not None:
            save_checkpoint(state, os.path.join(checkpoint_dir, f"epoch_{epoch:03d}.ckpt"))
    return state, ledger


def train_direct(state: ModelState, labeled, config: TrainConfig,
                 eval_set=None, checkpoint_dir=None):
    """Minibatch Adam on cross-entropy over a fully labeled set.

    Mutates ``state`` in place; returns (state, RunLedger).
    """
    if config.mode != DIRECT_CE:
        raise ValueError(f"train_direct needs mode='direct_ce', got {config.mode!r}")
    if not labeled:
        raise ValueError("train_direct needs at least one labeled example")
    ids, lens = _stack_ids(labeled)
    labels = _stack_labels(labeled)

    def batch_grad(idx, logits):
        y = labels[idx]
        return cross_entropy(logits, y), cross_entropy_backward(logits, y)

    return _run_epochs(state, ids, lens, config, batch_grad, eval_set, checkpoint_dir)


def train_distill(state: ModelState, labeled, unlabeled, config: TrainConfig,
                  eval_set=None, checkpoint_dir=None):
    """Distillation over the shuffled union of labeled and pseudo-labeled data.

    Every example (labeled or not) must carry teacher logits.  The batch
    objective is alpha * CE(labeled rows) + (1 - alpha) * MAE(all rows);
    with the default alpha = 0 labels are never read.  Mutates ``state``;
    returns (state, RunLedger).
    """
    if config.mode not in (DISTILL_MAE, MIXED):
        raise ValueError(f"train_distill needs a distillation mode, got {config.mode!r}")
    union = list(labeled) + list(unlabeled)
    if not union:
        raise ValueError("train_distill needs at least one example")
    if labeled and unlabeled:
        ratio = len(unlabeled) / len(labeled)
        if abs(ratio - config.unlabeled_ratio) > 0.2 * config.unlabeled_ratio:
            warnings.warn(
                f"unlabeled/labeled ratio {ratio:.2f} is more than 20% away from "
                f"the configured {config.unlabeled_ratio:.2f}"
            )
    ids, lens = _stack_ids(union)
    teacher = _stack_teacher_logits(union, state.config.n_classes)

    alpha = config.alpha
    if alpha > 0.0:
        has_label = np.array([ex.label is not None for ex in union])
        labels = np.array(
            [ex.label if ex.label is not None else -1 for ex in union], dtype=np.int64
        )

    def batch_grad(idx, logits):
        t = teacher[idx]
        loss = (1.0 - alpha) * mae_loss(logits, t)
        dlogits = (1.0 - alpha) * mae_loss_backward(logits, t)
        if alpha > 0.0:
            rows = np.nonzero(has_label[idx])[0]
            if rows.size:
                sub = logits[rows]
                y = labels[idx][rows]
                loss += alpha * cross_entropy(sub, y)
                dlogits[rows] += alpha * cross_entropy_backward(sub, y)
        return loss, dlogits

    return _run_epochs(state, ids, lens, config, batch_grad, eval_set, checkpoint_dir)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # [gold, predicted]
    n_examples: int


def evaluate(state: ModelState, test_set, batch_size: int = 32) -> EvalResult:
    """Accuracy and per-class confusion; argmax ties go to the lowest class."""
    if not test_set:
        raise ValueError("evaluate needs a non-empty labeled test set")
    ids, lens = _stack_ids(test_set)
    labels = _stack_labels(test_set)
    n_classes = state.config.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    correct = 0
    for sl in _batch_slices(len(test_set), batch_size):
        logits, _ = forward(state, ids[sl], lens[sl])
        preds = logits.argmax(axis=1)
        gold = labels[sl]
        correct += int((preds == gold).sum())
        np.add.at(confusion, (gold, preds), 1)
    return EvalResult(accuracy=correct / len(test_set), confusion=confusion,
                      n_examples=len(test_set))


def dump_predictions(path, state: ModelState, test_set, batch_size: int = 32) -> None:
    """Write "id,predicted,gold" CSV rows for an independent recount."""
    ids, lens = _stack_ids(test_set)
    labels = _stack_labels(test_set)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "predicted", "gold"])
        for sl in _batch_slices(len(test_set), batch_size):
            logits, _ = forward(state, ids[sl], lens[sl])
            preds = logits.argmax(axis=1)
            for ex, pred, gold in zip(test_set[sl], preds, labels[sl]):
                writer.writerow([ex.id, int(pred), int(gold)])


def recount_predictions(path) -> float:
    """Recompute accuracy from a dump_predictions file."""
    total = 0
    correct = 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["id", "predicted", "gold"]:
            raise ValueError(f"{path}: unexpected prediction-file header {header}")
        for record in reader:
            total += 1
            correct += record[1] == record[2]
    if total == 0:
        raise ValueError(f"{path}: no prediction rows")
    return correct / total


# ---------------------------------------------------------------------------
# surrogate teacher and the end-to-end protocol


def make_surrogate_teacher(pool, model_config: ModelConfig, train_config: TrainConfig,
                           student_labeled_count: int = None, eval_set=None,
                           checkpoint_dir=None):
    """Train a larger direct-CE model to serve distillation logits.

    Stands in for an external large teacher; by default an 8-layer BlendCNN
    trained on a labeled pool much bigger than the student's.
    """
    if student_labeled_count is not None and len(pool) < student_labeled_count:
        warnings.warn(
            f"surrogate teacher pool ({len(pool)}) is smaller than the student's "
            f"labeled set ({student_labeled_count})"
        )
    state = init_model(model_config, train_config.seed)
    return train_direct(state, pool, train_config, eval_set=eval_set,
                        checkpoint_dir=checkpoint_dir)


@dataclass(frozen=True)
class ProtocolConfig:
    """Desk-scale distillation experiment: sizes, splits, and budgets."""

    n_classes: int = 4
    seq_len: int = 32
    vocab_cap: int = 20000
    labeled_per_class: int = 100
    unlabeled_ratio: int = 10
    split_seed: int = 17
    teacher_seed: int = 1000
    teacher_layers: int = 8
    teacher_epochs: int = 3
    student_layers: int = 3
    student_epochs: int = 20
    direct_epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    student_seeds: tuple = (1, 2, 3)


@dataclass
class ProtocolResult:
    teacher_accuracy: float
    direct_accuracies: list
    distill_accuracies: list
    distill_labeled_only_accuracies: list

    @staticmethod
    def _median(values):
        return float(np.median(values))

    @property
    def direct_median(self) -> float:
        return self._median(self.direct_accuracies)

    @property
    def distill_median(self) -> float:
        return self._median(self.distill_accuracies)

    @property
    def distill_labeled_only_median(self) -> float:
        return self._median(self.distill_labeled_only_accuracies)

    def summary(self) -> str:
        pct = lambda x: f"{100.0 * x:.2f}"
        lines = [
            f"teacher accuracy:                 {pct(self.teacher_accuracy)}",
            f"direct student (median):          {pct(self.direct_median)}",
            f"distilled, labeled only (median): {pct(self.distill_labeled_only_median)}",
            f"distilled + unlabeled (median):   {pct(self.distill_median)}",
        ]
        return "\n".join(lines)


def run_distillation_protocol(train_rows, test_rows, config: ProtocolConfig) -> ProtocolResult:
    """Full pipeline: teacher, splits, logits, three student arms, evaluation.

    Arms (each trained per student seed, evaluated on the test rows):
      direct                CE on the small labeled split
      distill + unlabeled   MAE to teacher logits on labeled + pseudo-labeled
      distill labeled-only  MAE to teacher logits on the labeled split alone
    """
    from .text import build_vocab, encode_dataset, stratified_sample, sample_rows, tokenize

    vocab = build_vocab((tokenize(text) for _, text, _ in train_rows), cap=config.vocab_cap)

    def encode_rows(rows, drop_labels=False):
        prepared = [(i, t, None if drop_labels else l) for i, t, l in rows]
        return encode_dataset(prepared, vocab, config.seq_len)

    pool = encode_rows(train_rows)
    test = encode_rows(test_rows)

    teacher_model = ModelConfig(
        kind="blendcnn", n_classes=config.n_classes, seq_len=config.seq_len,
        vocab_size=len(vocab), n_layers=config.teacher_layers,
    )
    teacher_train = TrainConfig(
        mode=DIRECT_CE, batch_size=config.batch_size, epochs=config.teacher_epochs,
        seed=config.teacher_seed, lr=config.lr,
    )
    n_labeled = config.labeled_per_class * config.n_classes
    teacher, _ = make_surrogate_teacher(
        pool, teacher_model, teacher_train, student_labeled_count=n_labeled
    )
    teacher_accuracy = evaluate(teacher, test).accuracy

    labeled_rows, rest_rows = stratified_sample(
        train_rows, config.labeled_per_class, config.split_seed
    )
    unlabeled_rows = sample_rows(
        rest_rows, config.unlabeled_ratio * n_labeled, config.split_seed + 1
    )
    labeled = encode_rows(labeled_rows)
    unlabeled = encode_rows(unlabeled_rows, drop_labels=True)

    records = infer_logits(teacher, labeled + unlabeled, batch_size=config.batch_size)
    labeled_t = attach_teacher_logits(labeled, records)
    unlabeled_t = attach_teacher_logits(unlabeled, records)

    student_model = ModelConfig(
        kind="blendcnn", n_classes=config.n_classes, seq_len=config.seq_len,
        vocab_size=len(vocab), n_layers=config.student_layers,
    )

    direct_acc = []
    distill_acc = []
    labeled_only_acc = []
    for seed in config.student_seeds:
        state = init_model(student_model, seed)
        train_direct(state, labeled, TrainConfig(
            mode=DIRECT_CE, batch_size=config.batch_size,
            epochs=config.direct_epochs, seed=seed, lr=config.lr,
        ))
        direct_acc.append(evaluate(state, test).accuracy)

        state = init_model(student_model, seed)
        train_distill(state, labeled_t, unlabeled_t, TrainConfig(
            mode=DISTILL_MAE, batch_size=config.batch_size,
            epochs=config.student_epochs, seed=seed, lr=config.lr,
            unlabeled_ratio=config.unlabeled_ratio,
        ))
        distill_acc.append(evaluate(state, test).accuracy)

        state = init_model(student_model, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # expected ratio warning: no unlabeled arm
            train_distill(state, labeled_t, [], TrainConfig(
                mode=DISTILL_MAE, batch_size=config.batch_size,
                epochs=config.direct_epochs, seed=seed, lr=config.lr,
                unlabeled_ratio=config.unlabeled_ratio,
            ))
        labeled_only_acc.append(evaluate(state, test).accuracy)

    return ProtocolResult(
        teacher_accuracy=teacher_accuracy,
        direct_accuracies=direct_acc,
        distill_accuracies=distill_acc,
        distill_labeled_only_accuracies=labeled_only_acc,
    )
