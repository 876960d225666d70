"""Text pipeline: tokenization, vocabulary, encoding, GloVe and CSV loading.

Preprocessing is deliberately fixed (lowercase, split on non-alphanumeric
runs) so that vocabulary composition is reproducible; changing it changes
every downstream result.
"""
from __future__ import annotations

import csv
import os
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "PAD_ID",
    "UNK_ID",
    "PAD_TOKEN",
    "UNK_TOKEN",
    "Vocabulary",
    "Example",
    "EmbeddingMatrix",
    "CsvSchema",
    "tokenize",
    "build_vocab",
    "encode",
    "encode_dataset",
    "load_glove",
    "load_csv_dataset",
    "stratified_sample",
    "sample_rows",
]

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# maximal runs of Unicode alphanumerics (\w minus underscore)
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list:
    """Lowercase and split on any maximal run of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    """Dense token<->id mapping with reserved ids 0=PAD and 1=UNK."""

    token_to_id: dict = field(default_factory=dict)
    id_to_token: list = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_for(self, idx: int) -> str:
        return self.id_to_token[idx]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def save(self, path) -> None:
        """Persist as one "token<TAB>id" line per token, reserved ids included."""
        with open(path, "w", encoding="utf-8") as fh:
            for idx, token in enumerate(self.id_to_token):
                fh.write(f"{token}\t{idx}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        id_to_token = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                try:
                    token, idx = line.split("\t")
                    idx = int(idx)
                except ValueError as exc:
                    raise ValueError(f"{path}:{line_no}: malformed vocabulary line") from exc
                if idx != len(id_to_token):
                    raise ValueError(f"{path}:{line_no}: ids must be dense, got {idx}")
                id_to_token.append(token)
        if id_to_token[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError(f"{path}: reserved tokens missing or reordered")
        vocab = cls(id_to_token=id_to_token)
        vocab.token_to_id = {t: i for i, t in enumerate(id_to_token) if i >= 2}
        return vocab


def build_vocab(corpus, cap: int = 20000) -> Vocabulary:
    """Keep the top (cap - 2) tokens by frequency, ties broken lexicographically.

    ``corpus`` is an iterable of token lists.  Ids 2.. are assigned in
    (frequency desc, token asc) order; 0 and 1 stay reserved for PAD/UNK.
    """
    if cap < 2:
        raise ValueError(f"vocabulary cap must be >= 2, got {cap}")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    if not counts:
        warnings.warn("building vocabulary from an empty corpus; reserved tokens only")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    vocab = Vocabulary()
    for token, _ in ranked[: cap - 2]:
        vocab.token_to_id[token] = len(vocab.id_to_token)
        vocab.id_to_token.append(token)
    return vocab


def encode(tokens, vocab: Vocabulary, seq_len: int):
    """Map tokens to ids, truncate to ``seq_len`` (keep prefix), right-pad.

    Returns (token_ids int64 [seq_len], valid_len).
    """
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    ids = np.zeros(seq_len, dtype=np.int64)
    valid = min(len(tokens), seq_len)
    for pos in range(valid):
        ids[pos] = vocab.id_for(tokens[pos])
    return ids, valid


@dataclass
class Example:
    """One encoded sample: padded token ids plus optional label and teacher logits."""

    id: str
    token_ids: np.ndarray
    valid_len: int
    label: int = None
    teacher_logits: np.ndarray = None

    def with_teacher_logits(self, logits) -> "Example":
        return replace(self, teacher_logits=np.asarray(logits, dtype=np.float64))


def encode_dataset(rows, vocab: Vocabulary, seq_len: int) -> list:
    """Encode (id, text, label) rows into Examples; label may be None."""
    out = []
    for row_id, text, label in rows:
        ids, valid = encode(tokenize(text), vocab, seq_len)
        out.append(Example(id=row_id, token_ids=ids, valid_len=valid, label=label))
    return out


# ---------------------------------------------------------------------------
# embeddings

PROVENANCE_FROZEN = "frozen-zero"
PROVENANCE_PRETRAINED = "pretrained"
PROVENANCE_RANDOM = "random-init"


@dataclass
class EmbeddingMatrix:
    """[vocab_size, embed_dim] embedding table with per-row provenance.

    Row 0 (PAD) is all-zero and stays frozen; every other row is trainable.
    ``coverage`` is the fraction of non-reserved vocabulary tokens found in
    the pretrained file.
    """

    matrix: np.ndarray
    provenance: list
    coverage: float


def load_glove(path, vocab: Vocabulary, embed_dim: int = 100, seed: int = 0) -> EmbeddingMatrix:
    """Read GloVe-format text ("token v1 .. vN" per line) for an existing vocab.

    In-vocab tokens take their file vectors (first occurrence wins); missing
    tokens are initialized uniform(-0.05, 0.05) from ``seed``; the PAD row is
    zero and frozen.  Malformed lines and dimension mismatches raise with the
    offending line number.
    """
    rng = np.random.default_rng(seed)
    size = len(vocab)
    matrix = rng.uniform(-0.05, 0.05, size=(size, embed_dim))
    matrix[PAD_ID] = 0.0
    provenance = [PROVENANCE_RANDOM] * size
    provenance[PAD_ID] = PROVENANCE_FROZEN

    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) <= 1 and not parts[0]:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != embed_dim:
                raise ValueError(
                    f"{path}:{line_no}: expected {embed_dim} values, got {len(values)}"
                )
            if token not in vocab or token in seen:
                continue
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: non-numeric embedding value") from exc
            idx = vocab.token_to_id[token]
            matrix[idx] = vec
            provenance[idx] = PROVENANCE_PRETRAINED
            seen.add(token)

    n_real = size - 2
    coverage = len(seen) / n_real if n_real else 0.0
    return EmbeddingMatrix(matrix=matrix, provenance=provenance, coverage=coverage)


# ---------------------------------------------------------------------------
# CSV datasets


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of a labeled CSV: which column is the label, which hold text.

    ``label_base`` is 1 for files whose classes start at 1 (AG News style);
    labels are shifted to 0-base on load.
    """

    label_col: int = 0
    text_cols: tuple = (1, 2)
    label_base: int = 1

    def __post_init__(self):
        if self.label_base not in (0, 1):
            raise ValueError(f"label_base must be 0 or 1, got {self.label_base}")


def load_csv_dataset(path, schema: CsvSchema = CsvSchema()) -> list:
    """Read an RFC-4180-style CSV into (id, text, label) rows.

    Text columns are joined with a single space; ids are "<filename>:<row>"
    with a 0-based row index.  Bad labels or missing columns raise with the
    CSV line number.
    """
    name = os.path.basename(path)
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for index, record in enumerate(reader):
            line_no = reader.line_num
            needed = max(schema.label_col, *schema.text_cols)
            if len(record) <= needed:
                raise ValueError(
                    f"{path}:{line_no}: row has {len(record)} columns, need >= {needed + 1}"
                )
            raw = record[schema.label_col]
            try:
                label = int(raw) - schema.label_base
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: non-integer label {raw!r}") from exc
            if label < 0:
                raise ValueError(f"{path}:{line_no}: label {raw!r} below label_base")
            text = " ".join(record[c] for c in schema.text_cols)
            rows.append((f"{name}:{index}", text, label))
    return rows


def stratified_sample(rows, per_class: int, seed: int):
    """Draw exactly ``per_class`` rows per label, reproducibly.

    Returns (sample, remainder), both in original row order.
    """
    by_class = {}
    for pos, row in enumerate(rows):
        by_class.setdefault(row[2], []).append(pos)
    rng = np.random.default_rng(seed)
    chosen = set()
    for label in sorted(by_class):
        positions = by_class[label]
        if len(positions) < per_class:
            raise ValueError(
                f"class {label} has only {len(positions)} rows, need {per_class}"
            )
        picked = rng.permutation(len(positions))[:per_class]
        chosen.update(positions[i] for i in picked)
    sample = [row for pos, row in enumerate(rows) if pos in chosen]
    rest = [row for pos, row in enumerate(rows) if pos not in chosen]
    return sample, rest


def sample_rows(rows, count: int, seed: int) -> list:
    """Uniform sample without replacement, in original row order."""
    if count > len(rows):
        raise ValueError(f"asked for {count} rows from a pool of {len(rows)}")
    rng = np.random.default_rng(seed)
    keep = set(rng.permutation(len(rows))[:count].tolist())
    return [row for pos, row in enumerate(rows) if pos in keep]
