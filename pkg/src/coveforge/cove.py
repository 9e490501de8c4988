"""Frozen MT-LSTM context vectors and the concatenated input representation."""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import TokenBatch
from .embeddings import EmbeddingTable, FormatError, lookup_sequence
from .layers import BiLSTMStack, Module
from .tensor import ContractError, DimensionError

COVE_MAGIC = b"COVE1\n"


class CoveEncoder(Module):
    """A detached copy of a trained MT-LSTM and its source table.

    Every parameter is frozen, and ``extract_cove`` runs without recording a
    tape, so downstream losses cannot reach these weights.
    """

    def __init__(self, encoder: BiLSTMStack, src_table: EmbeddingTable):
        if encoder.n_in != src_table.dim:
            raise DimensionError(
                f"encoder expects {encoder.n_in}-d inputs, embedding table is {src_table.dim}-d")
        self.encoder = copy.deepcopy(encoder)
        self.src_table = copy.deepcopy(src_table)
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        self.eval()

    @classmethod
    def from_model(cls, model) -> "CoveEncoder":
        return cls(model.encoder, model.src_table)

    @property
    def width(self) -> int:
        return self.encoder.out_dim

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def train(self, mode: bool = True) -> "CoveEncoder":
        # always inference mode
        for m in self.modules():
            m.training = False
        return self

    def __call__(self, tokens: TokenBatch) -> np.ndarray:
        return extract_cove(self, tokens)


def extract_cove(enc: CoveEncoder, tokens: TokenBatch) -> np.ndarray:
    """(B, T, 2H) context vectors; plain arrays, so gradient-isolated by type."""
    with T.no_grad():
        x = lookup_sequence(enc.src_table, tokens.ids)
        out = enc.encoder(x, tokens.mask)
    return out.data * tokens.mask[..., None]


@dataclass
class AugmentedSequence:
    vectors: np.ndarray   # (B, T, width) or (T, width)
    mask: np.ndarray
    blocks: tuple[tuple[str, int], ...]   # (name, width) in concatenation order

    @property
    def width(self) -> int:
        return self.vectors.shape[-1]

    def block(self, name: str) -> np.ndarray:
        start = 0
        for n, w in self.blocks:
            if n == name:
                return self.vectors[..., start:start + w]
            start += w
        raise KeyError(name)


def concat_inputs(glove: np.ndarray, cove: np.ndarray | None, char: np.ndarray | None = None,
                  mask: np.ndarray | None = None) -> AugmentedSequence:
    """Per-token [glove; cove; char] in that fixed order."""
    parts = [("glove", np.asarray(glove))]
    if cove is not None:
        parts.append(("cove", np.asarray(cove)))
    if char is not None:
        parts.append(("char", np.asarray(char)))
    lead = parts[0][1].shape[:-1]
    for name, arr in parts[1:]:
        if arr.shape[:-1] != lead:
            raise ContractError(f"{name} block has leading shape {arr.shape[:-1]}, glove has {lead}")
    if mask is None:
        mask = np.ones(lead, dtype=bool)
    vectors = np.concatenate([a for _, a in parts], axis=-1)
    return AugmentedSequence(vectors, np.asarray(mask, dtype=bool),
                             tuple((n, a.shape[-1]) for n, a in parts))


# ---------------------------------------------------------------- CoVe files


def save_cove(path: str | Path, sequences: Sequence[np.ndarray], width: int | None = None) -> None:
    """Write variable-length (T_i, width) arrays as little-endian float32."""
    sequences = [np.asarray(s) for s in sequences]
    if width is None:
        width = sequences[0].shape[1] if sequences else 0
    for s in sequences:
        if s.ndim != 2 or s.shape[1] != width:
            raise DimensionError(f"CoVe record of shape {s.shape} does not have width {width}")
    lengths = ",".join(str(s.shape[0]) for s in sequences) or "-"
    with open(path, "wb") as fh:
        fh.write(COVE_MAGIC)
        fh.write(f"{len(sequences)} {lengths} {width}\n".encode("ascii"))
        for s in sequences:
            fh.write(np.ascontiguousarray(s, dtype="<f4").tobytes())


def load_cove(path: str | Path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(len(COVE_MAGIC)) != COVE_MAGIC:
            raise FormatError(f"{path}: not a CoVe file (bad magic)")
        header = fh.readline()
        try:
            count_s, lengths_s, width_s = header.decode("ascii").split()
            count, width = int(count_s), int(width_s)
            lengths = [] if lengths_s == "-" else [int(n) for n in lengths_s.split(",")]
        except (UnicodeDecodeError, ValueError):
            raise FormatError(f"{path}: corrupt CoVe manifest {header[:80]!r}") from None
        if len(lengths) != count:
            raise FormatError(f"{path}: manifest lists {len(lengths)} lengths for {count} records")
        payload = fh.read()
    expected = sum(lengths) * width * 4
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, manifest implies {expected}")
    flat = np.frombuffer(payload, dtype="<f4")
    out, start = [], 0
    for n in lengths:
        out.append(flat[start:start + n * width].reshape(n, width).copy())
        start += n * width
    return out
