"""Padded token batches, deterministic shuffling/bucketing, and corpus readers."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embeddings import PAD, FormatError, Vocabulary
from .tensor import ContractError

logger = logging.getLogger(__name__)


@dataclass
class TokenBatch:
    ids: np.ndarray      # (B, T) int64, PAD beyond each length
    mask: np.ndarray     # (B, T) bool, true iff t < lengths[b]
    lengths: np.ndarray  # (B,)

    @classmethod
    def from_sequences(cls, seqs: Sequence[Sequence[int]], pad_to: int | None = None) -> "TokenBatch":
        if not seqs:
            raise ContractError("empty batch")
        lengths = np.array([len(s) for s in seqs], dtype=np.int64)
        if lengths.min() < 1:
            raise ContractError("batch contains an empty sequence")
        width = max(int(lengths.max()), pad_to or 0)
        ids = np.full((len(seqs), width), PAD, dtype=np.int64)
        for b, s in enumerate(seqs):
            ids[b, :len(s)] = s
        mask = np.arange(width)[None, :] < lengths[:, None]
        return cls(ids, mask, lengths)

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def steps(self) -> int:
        return self.ids.shape[1]

    def select(self, rows) -> "TokenBatch":
        rows = np.asarray(rows)
        lengths = self.lengths[rows]
        width = int(lengths.max())
        return TokenBatch(self.ids[rows, :width], self.mask[rows, :width], lengths)

    def sequences(self) -> list[list[int]]:
        return [self.ids[b, :n].tolist() for b, n in enumerate(self.lengths)]


@dataclass
class Batch:
    indices: np.ndarray
    fields: tuple[TokenBatch, ...]


class Batches(list):
    """List of batches that also records how many examples were truncated."""

    truncated = 0


def make_batches(corpus: Sequence, batch_size: int, rng: np.random.Generator | None = None,
                 bucketing: bool = False, max_len: int | None = None,
                 bucket_span: int = 50) -> Batches:
    """Split ``corpus`` into padded batches.

    Each corpus item is one id sequence or a tuple of them (e.g. a source and
    target pair); every field becomes its own TokenBatch. With ``rng`` the
    order is shuffled; with ``bucketing`` items of similar length share a
    batch. Sequences over ``max_len`` are truncated and counted in a warning.
    """
    if not corpus:
        raise ContractError("make_batches on an empty corpus")
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    items = [tuple(x) if isinstance(x, tuple) else (x,) for x in corpus]
    truncated = 0
    if max_len is not None:
        clipped = []
        for fields in items:
            if any(len(f) > max_len for f in fields):
                truncated += 1
                fields = tuple(f[:max_len] for f in fields)
            clipped.append(fields)
        items = clipped
        if truncated:
            logger.warning("truncated %d example(s) to max_len=%d", truncated, max_len)

    order = np.arange(len(items)) if rng is None else rng.permutation(len(items))
    if bucketing:
        span = batch_size * bucket_span
        chunks = []
        for start in range(0, len(order), span):
            chunk = order[start:start + span]
            keys = np.array([len(items[i][0]) for i in chunk])
            chunks.append(chunk[np.argsort(keys, kind="stable")])
        order = np.concatenate(chunks)
    groups = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if bucketing and rng is not None:
        groups = [groups[i] for i in rng.permutation(len(groups))]
    n_fields = len(items[0])
    batches = Batches()
    batches.truncated = truncated
    for g in groups:
        fields = tuple(TokenBatch.from_sequences([items[i][k] for i in g]) for k in range(n_fields))
        batches.append(Batch(np.asarray(g), fields))
    return batches


# ---------------------------------------------------------------- corpora


def read_tokenized(path: str | Path) -> list[list[str]]:
    return [line.split() for line in Path(path).read_text(encoding="utf-8").splitlines()]


def read_parallel(src_path: str | Path, tgt_path: str | Path) -> list[tuple[list[str], list[str]]]:
    src, tgt = read_tokenized(src_path), read_tokenized(tgt_path)
    if len(src) != len(tgt):
        raise FormatError(f"parallel files differ in length: {len(src)} vs {len(tgt)} lines")
    pairs = [(s, t) for s, t in zip(src, tgt) if s and t]
    if len(pairs) != len(src):
        logger.warning("skipped %d pair(s) with an empty side", len(src) - len(pairs))
    return pairs


def encode_parallel(pairs, src_vocab: Vocabulary, tgt_vocab: Vocabulary):
    """Source ids unbracketed; target ids wrapped in <bos> ... <eos>."""
    return [(src_vocab.encode(s), tgt_vocab.encode(t, bos=True, eos=True)) for s, t in pairs]


@dataclass
class ClassificationExample:
    label: str
    text: list[str]
    text2: list[str] | None = None


def read_tsv(path: str | Path) -> list[ClassificationExample]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not parts[1].split():
            raise FormatError(f"{path}:{lineno}: expected label<TAB>text[<TAB>text2]")
        text2 = parts[2].split() if len(parts) == 3 else None
        if text2 is not None and not text2:
            raise FormatError(f"{path}:{lineno}: empty second text")
        out.append(ClassificationExample(parts[0], parts[1].split(), text2))
    return out


def label_index(examples: Sequence[ClassificationExample], labels: list[str] | None = None) -> list[str]:
    """Labels in first-seen order, extending an existing list."""
    labels = list(labels or [])
    for ex in examples:
        if ex.label not in labels:
            labels.append(ex.label)
    return labels
