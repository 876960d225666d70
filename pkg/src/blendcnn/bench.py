"""Parameter-count and inference-throughput reports.

Throughput is eval-mode forward passes only: encoding, batching, and
sample selection all happen before the clock starts.  Each measurement
times the same batch sequence ``repetitions`` times and keeps the median,
after an untimed warmup.  Reports place measured numbers next to the
originally published reference figures in a separate "paper-reported"
column; those were taken on different hardware against the full AG News
task and are context, not targets.
"""
from __future__ import annotations

import csv
import io
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .models import ModelConfig, ModelState, forward
from .text import encode_dataset

__all__ = [
    "PAPER_REPORTED",
    "ThroughputConfig",
    "ThroughputResult",
    "model_display_name",
    "measure_throughput",
    "measure_many",
    "BenchReport",
    "report",
    "parse_report_csv",
]

# (total parameters, sentences per second) as published; K-80-era numbers on
# the full news task, shown for orientation only.
PAPER_REPORTED = {
    "KimCNN": (2_124_824, 3154.57),
    "3-layer BlendCNN": (2_975_236, 3676.47),
    "8-layer BlendCNN": (3_617_426, 2392.34),
    "OpenAI Transformer": (116_534_790, 11.76),
}


@dataclass(frozen=True)
class ThroughputConfig:
    n_samples: int = 1000
    batch_size: int = 32
    repetitions: int = 5
    warmup_batches: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.batch_size < 1:
            raise ValueError("n_samples and batch_size must be >= 1")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.warmup_batches < 0:
            raise ValueError(f"warmup_batches must be >= 0, got {self.warmup_batches}")


@dataclass
class ThroughputResult:
    model_name: str
    n_samples: int
    batch_size: int
    wall_seconds: float  # median over repetitions
    sentences_per_second: float
    hardware_note: str
    rep_seconds: list = field(default_factory=list)


def model_display_name(config: ModelConfig) -> str:
    if config.kind == "kimcnn":
        return "KimCNN"
    return f"{config.n_layers}-layer BlendCNN"


def _hardware_note() -> str:
    cpu = platform.processor() or platform.machine() or "unknown cpu"
    return f"{cpu}, {os.cpu_count()} logical cores, single worker"


def _as_predict_fn(model):
    """Accept a ModelState or any (ids, lens) -> logits callable (test stubs)."""
    if isinstance(model, ModelState):
        return lambda ids, lens: forward(model, ids, lens)[0]
    if callable(model):
        return model
    raise TypeError(f"expected ModelState or callable, got {type(model).__name__}")


def measure_throughput(model, dataset, config: ThroughputConfig = ThroughputConfig(),
                       vocab=None, seq_len: int = None,
                       model_name: str = None) -> ThroughputResult:
    """Median-of-repetitions eval throughput on a seeded sample of ``dataset``.

    ``dataset`` is either a list of encoded Examples or raw (id, text, label)
    rows together with ``vocab`` and ``seq_len``.  Encoding and sample
    selection run before any timing; the timed section is forward passes
    alone.  Raises if the dataset is smaller than ``config.n_samples``.
    """
    if vocab is not None:
        if seq_len is None:
            raise ValueError("raw rows need both vocab and seq_len")
        dataset = encode_dataset(dataset, vocab, seq_len)
    if len(dataset) < config.n_samples:
        raise ValueError(
            f"dataset too small: {len(dataset)} examples < n_samples={config.n_samples}"
        )
    predict = _as_predict_fn(model)
    if model_name is None:
        model_name = (model_display_name(model.config)
                      if isinstance(model, ModelState) else "stub")

    rng = np.random.default_rng(config.seed)
    picked = rng.permutation(len(dataset))[: config.n_samples]
    ids = np.stack([dataset[i].token_ids for i in picked])
    lens = np.array([dataset[i].valid_len for i in picked], dtype=np.int64)
    batches = [
        (ids[s:s + config.batch_size], lens[s:s + config.batch_size])
        for s in range(0, config.n_samples, config.batch_size)
    ]

    for i in range(config.warmup_batches):
        b_ids, b_lens = batches[i % len(batches)]
        predict(b_ids, b_lens)

    rep_seconds = []
    for _ in range(config.repetitions):
        start = time.perf_counter()
        for b_ids, b_lens in batches:
            predict(b_ids, b_lens)
        rep_seconds.append(time.perf_counter() - start)

    wall = float(np.median(rep_seconds))
    return ThroughputResult(
        model_name=model_name,
        n_samples=config.n_samples,
        batch_size=config.batch_size,
        wall_seconds=wall,
        sentences_per_second=config.n_samples / wall,
        hardware_note=_hardware_note(),
        rep_seconds=rep_seconds,
    )


def measure_many(models, dataset, config: ThroughputConfig = ThroughputConfig()) -> list:
    """Queue several models through the same seeded sample, one at a time."""
    return [measure_throughput(m, dataset, config) for m in models]


# ---------------------------------------------------------------------------
# reports

_CSV_COLUMNS = [
    "model",
    "total_parameters",
    "sentences_per_second",
    "paper_reported_parameters",
    "paper_reported_sentences_per_second",
]


@dataclass
class BenchReport:
    rows: list  # (model, params or None, sps or None, ref_params or None, ref_sps or None)
    text: str
    csv: str

    def save(self, text_path=None, csv_path=None) -> None:
        if text_path is not None:
            with open(text_path, "w", encoding="utf-8") as fh:
                fh.write(self.text)
        if csv_path is not None:
            with open(csv_path, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.csv)


def _fmt_params(v):
    return "" if v is None else f"{v:,}"


def _fmt_sps(v):
    return "" if v is None else f"{v:.2f}"


def report(results, counts, include_reference_only: bool = False) -> BenchReport:
    """Aligned text plus CSV: measured numbers beside paper-reported ones.

    ``results`` is a list of ThroughputResult (may be empty), ``counts`` maps
    model name to analytic total parameter count.  Cells without a value stay
    empty.  With ``include_reference_only`` the reference table's remaining
    models are appended as context rows with empty measured columns.
    """
    if not results and not counts:
        raise ValueError("report needs at least one measurement or count")
    sps = {r.model_name: r.sentences_per_second for r in results}
    names = [r.model_name for r in results]
    names += [n for n in counts if n not in sps]
    if include_reference_only:
        names += [n for n in PAPER_REPORTED if n not in names]

    rows = []
    for name in names:
        ref = PAPER_REPORTED.get(name, (None, None))
        rows.append((name, counts.get(name), sps.get(name), ref[0], ref[1]))

    header = ["Model", "Total parameters", "Sentences per second",
              "Total parameters (paper-reported)",
              "Sentences per second (paper-reported)"]
    cells = [header] + [
        [name, _fmt_params(p), _fmt_sps(s), _fmt_params(rp), _fmt_sps(rs)]
        for name, p, s, rp, rs in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for name, p, s, rp, rs in rows:
        writer.writerow([
            name,
            "" if p is None else p,
            "" if s is None else repr(s),
            "" if rp is None else rp,
            "" if rs is None else repr(rs),
        ])
    return BenchReport(rows=rows, text=text, csv=buf.getvalue())


def parse_report_csv(csv_text: str) -> list:
    """Inverse of the CSV side of report(); returns the rows tuples."""
    reader = csv.reader(io.StringIO(csv_text))
    header = next(reader)
    if header != _CSV_COLUMNS:
        raise ValueError(f"unexpected report header: {header}")
    rows = []
    for rec in reader:
        name, p, s, rp, rs = rec
        rows.append((
            name,
            int(p) if p else None,
            float(s) if s else None,
            int(rp) if rp else None,
            float(rs) if rs else None,
        ))
    return rows
