"""Attentional encoder-decoder whose encoder (the MT-LSTM) is later transferred."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import TokenBatch
from .embeddings import BOS, EOS, EmbeddingTable, lookup_sequence
from .layers import Affine, BiLSTMStack, Dropout, LSTMCell, Module, lstm_cell_step
from .tensor import ContractError, DimensionError, Tensor


@dataclass
class AttentionMemory:
    H: Tensor          # (B, T, 2H) encoder states
    src_mask: np.ndarray  # (B, T)


@dataclass
class DecoderState:
    layers: list[tuple[Tensor, Tensor]]  # (h, c) per decoder layer
    context_adjusted: Tensor              # (B, H_dec)
    step: int = 0


class EncoderDecoderModel(Module):
    """MT-LSTM encoder over fixed source vectors plus a two-layer attentional decoder.

    The decoder width is twice the encoder hidden size, matching the
    encoder's bidirectional output width.
    """

    def __init__(self, src_table: EmbeddingTable, tgt_vocab_size: int, hidden: int = 300,
                 tgt_dim: int = 300, dropout: float = 0.2, depth: int = 2,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.src_table = src_table
        self.tgt_table = EmbeddingTable.random(tgt_vocab_size, tgt_dim, rng, bound=0.1)
        self.encoder = BiLSTMStack(src_table.dim, hidden, depth=depth, rng=rng)
        dec = 2 * hidden
        self.decoder = [LSTMCell(tgt_dim + dec, dec, rng), LSTMCell(dec, dec, rng)]
        self.attn_in = Affine(dec, 2 * hidden, rng)
        self.attn_out = Affine(2 * hidden + dec, dec, rng)
        self.out_proj = Affine(dec, tgt_vocab_size, rng)
        self.drop = Dropout(dropout, np.random.default_rng(rng.integers(2**32)))

    @property
    def hidden(self) -> int:
        return self.encoder.hidden

    @property
    def dec_hidden(self) -> int:
        return self.decoder[0].hidden

    @property
    def tgt_vocab_size(self) -> int:
        return self.out_proj.n_out

    def config(self) -> dict:
        return {"hidden": self.hidden, "depth": len(self.encoder.layers),
                "src_dim": self.src_table.dim, "tgt_dim": self.tgt_table.dim,
                "src_vocab": len(self.src_table), "tgt_vocab": self.tgt_vocab_size,
                "dropout": self.drop.ratio}


def encode(model: EncoderDecoderModel, src: TokenBatch) -> AttentionMemory:
    if src.steps < 1 or src.size < 1:
        raise ContractError("encode on an empty source batch")
    x = model.drop(lookup_sequence(model.src_table, src.ids))
    H = model.drop(model.encoder(x, src.mask, dropout=model.drop))
    return AttentionMemory(H, src.mask)


def initial_state(model: EncoderDecoderModel, batch: int, dtype=None) -> DecoderState:
    dtype = dtype or model.out_proj.W.dtype
    zeros = lambda: T.zeros((batch, model.dec_hidden), dtype=dtype)  # noqa: E731
    return DecoderState([(zeros(), zeros()) for _ in model.decoder], zeros(), 0)


def attention_weights(mem: AttentionMemory, h_dec: Tensor, attn_in: Affine) -> Tensor:
    """Softmax over encoder steps of H (W1 h_dec + b1); padded steps get exactly 0."""
    if h_dec.shape[-1] != attn_in.n_in or mem.H.shape[-1] != attn_in.n_out:
        raise DimensionError(
            f"attention: query {h_dec.shape}, memory {mem.H.shape}, W1 {attn_in.W.shape}")
    query = attn_in(h_dec)                                   # (B, 2H)
    scores = T.reshape(T.matmul(mem.H, T.reshape(query, query.shape + (1,))),
                       mem.H.shape[:-1])                     # (B, T)
    return T.softmax(scores, axis=-1, mask=mem.src_mask)


def attend(mem: AttentionMemory, alpha: Tensor) -> Tensor:
    """H^T alpha per batch item -> (B, 2H)."""
    summed = T.matmul(T.reshape(alpha, (alpha.shape[0], 1, alpha.shape[1])), mem.H)
    return T.reshape(summed, (alpha.shape[0], mem.H.shape[-1]))


def decoder_step(model: EncoderDecoderModel, state: DecoderState, z_prev: Tensor,
                 mem: AttentionMemory) -> tuple[DecoderState, Tensor]:
    x = model.drop(T.concat([z_prev, state.context_adjusted], axis=-1))
    layers = []
    for k, cell in enumerate(model.decoder):
        h, c = lstm_cell_step(cell, x, *state.layers[k])
        layers.append((h, c))
        x = model.drop(h) if k + 1 < len(model.decoder) else h
    h_top = layers[-1][0]
    alpha = attention_weights(mem, h_top, model.attn_in)
    h_tilde = T.tanh(model.attn_out(T.concat([attend(mem, alpha), h_top], axis=-1)))
    logits = model.out_proj(model.drop(h_tilde))
    return DecoderState(layers, h_tilde, state.step + 1), logits


def decode_logits(model: EncoderDecoderModel, mem: AttentionMemory, tgt: TokenBatch) -> list[Tensor]:
    """Teacher-forced logits for predicting tgt[:, 1:] from tgt[:, :-1]."""
    z = lookup_sequence(model.tgt_table, tgt.ids[:, :-1])
    state = initial_state(model, tgt.size, mem.H.dtype)
    logits = []
    for t in range(tgt.steps - 1):
        state, step_logits = decoder_step(model, state, z[:, t], mem)
        logits.append(step_logits)
    return logits


def teacher_forced_loss(model: EncoderDecoderModel, src: TokenBatch, tgt: TokenBatch,
                        reduction: str = "mean") -> Tensor:
    """Mean cross-entropy over valid target positions (the <bos> input is not scored)."""
    if tgt.steps < 2 or np.any(tgt.lengths < 2):
        raise ContractError("target sequences need at least <bos> and <eos>")
    mem = encode(model, src)
    logits = T.stack(decode_logits(model, mem, tgt), axis=1)   # (B, T-1, V)
    gold = tgt.ids[:, 1:]
    mask = tgt.mask[:, 1:]
    if reduction == "sum":
        nll = -T.pick(T.log_softmax(logits), gold)
        return T.tsum(nll * T.constant(mask.astype(nll.dtype), dtype=nll.dtype))
    return T.cross_entropy(logits, gold, mask)


def greedy_decode(model: EncoderDecoderModel, src: TokenBatch, max_len: int) -> list[list[int]]:
    """Feed back argmax tokens (lowest id wins ties); stop at <eos> or ``max_len``."""
    was_training = model.training
    model.eval()
    try:
        with T.no_grad():
            mem = encode(model, src)
            state = initial_state(model, src.size, mem.H.dtype)
            prev = np.full(src.size, BOS, dtype=np.int64)
            out: list[list[int]] = [[] for _ in range(src.size)]
            done = np.zeros(src.size, dtype=bool)
            for _ in range(max_len):
                z = lookup_sequence(model.tgt_table, prev)
                state, logits = decoder_step(model, state, z, mem)
                prev = np.argmax(logits.data, axis=-1)
                for b in np.flatnonzero(~done):
                    if prev[b] == EOS:
                        done[b] = True
                    else:
                        out[b].append(int(prev[b]))
                if done.all():
                    break
    finally:
        model.train(was_training)
    return out
