"""Vocabularies, fixed pretrained word-vector tables, and hashed char n-grams."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .layers import Module, Parameter
from .tensor import ContractError, Tensor

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")


class FormatError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for sent in sentences:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
        # first-seen order keeps ids stable across runs
        return cls(t for t, c in counts.items() if c >= min_count)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Sequence[str], bos: bool = False, eos: bool = False) -> list[int]:
        ids = [self.id(t) for t in tokens]
        if bos:
            ids.insert(0, BOS)
        if eos:
            ids.append(EOS)
        return ids

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def content_tokens(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.content_tokens()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(line for line in lines if line)


class EmbeddingTable(Module):
    def __init__(self, matrix: np.ndarray, trainable: bool = False):
        self.matrix = Parameter(matrix, requires_grad=trainable)
        self.coverage: tuple[int, int] | None = None

    @property
    def trainable(self) -> bool:
        return self.matrix.requires_grad

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def random(cls, size: int, dim: int, rng: np.random.Generator, bound: float = 0.1,
               trainable: bool = True) -> "EmbeddingTable":
        m = rng.uniform(-bound, bound, size=(size, dim))
        m[PAD] = 0.0
        return cls(m, trainable=trainable)

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.matrix.data).tobytes()).hexdigest()

    def __call__(self, ids) -> Tensor:
        return lookup_sequence(self, ids)


def lookup_sequence(table: EmbeddingTable, ids) -> Tensor:
    """Gather embeddings for an id array; ``<pad>`` always yields zeros."""
    ids = np.asarray(ids, dtype=np.int64)
    out = T.take_rows(table.matrix, ids)
    if np.any(ids == PAD):
        keep = (ids != PAD).astype(out.dtype)[..., None]
        out = out * T.constant(keep, dtype=out.dtype)
    return out


def read_vectors(path: str | Path, dim: int | None = None) -> dict[str, np.ndarray]:
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} values for {token!r}, got {len(values)}")
            try:
                vectors[token] = np.array([float(v) for v in values])
            except ValueError as err:
                raise FormatError(f"{path}:{lineno}: unparseable value ({err})") from None
    return vectors


def load_pretrained_text(path: str | Path, vocab: Vocabulary, dim: int) -> EmbeddingTable:
    """Build a fixed table for ``vocab`` from a token-then-floats text file.

    Lookups try the lowercased token first, then the surface form. Misses
    get the zero vector. ``table.coverage`` is ``(hits, content-vocab size)``.
    """
    vectors = read_vectors(path, dim)
    matrix = np.zeros((len(vocab), dim))
    hits = 0
    for i, tok in enumerate(vocab.itos):
        if i < len(RESERVED):
            continue
        vec = vectors.get(tok.lower())
        if vec is None:
            vec = vectors.get(tok)
        if vec is not None:
            matrix[i] = vec
            hits += 1
    table = EmbeddingTable(matrix, trainable=False)
    total = len(vocab) - len(RESERVED)
    table.coverage = (hits, total)
    if hits < total:
        logger.info("pretrained coverage %d/%d from %s", hits, total, path)
    return table


def write_vectors(path: str | Path, vectors: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, vec in vectors.items():
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


# ---------------------------------------------------------------- char n-grams


def fnv1a(data: bytes, seed: int = 0) -> int:
    h = (0x811C9DC5 ^ seed) & 0xFFFFFFFF
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def char_ngrams(token: str, n_min: int, n_max: int) -> list[str]:
    wrapped = f"#{token}#"
    return [wrapped[i:i + n] for n in range(n_min, n_max + 1)
            for i in range(len(wrapped) - n + 1)]


@dataclass
class CharNGramEmbedder:
    table: np.ndarray
    n_range: tuple[int, int] = (2, 4)
    seed: int = 0

    @classmethod
    def create(cls, dim: int = 100, buckets: int = 50_000, n_range=(2, 4), seed: int = 0,
               rng: np.random.Generator | None = None) -> "CharNGramEmbedder":
        rng = rng or np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / np.sqrt(dim), size=(buckets, dim)), tuple(n_range), seed)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def buckets(self) -> int:
        return self.table.shape[0]

    def bucket_ids(self, token: str) -> list[int]:
        grams = char_ngrams(token, *self.n_range)
        return [fnv1a(g.encode("utf-8"), self.seed) % self.buckets for g in grams]

    def __call__(self, token: str) -> np.ndarray:
        return char_ngram_embed(self, token)


def char_ngram_embed(e: CharNGramEmbedder, token: str) -> np.ndarray:
    if not token:
        raise ContractError("char n-gram embedding of an empty token")
    return e.table[e.bucket_ids(token)].mean(axis=0)


def char_table_for_vocab(e: CharNGramEmbedder, vocab: Vocabulary) -> EmbeddingTable:
    """Precompute a fixed (V, d_c) table so char features gather like word vectors."""
    m = np.zeros((len(vocab), e.dim))
    for i, tok in enumerate(vocab.itos):
        if i >= len(RESERVED):
            m[i] = char_ngram_embed(e, tok)
    return EmbeddingTable(m, trainable=False)
