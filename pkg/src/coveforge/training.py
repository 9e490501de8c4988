"""Training loops, evaluation metrics, and the metrics log."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .bcn import BCNConfig, BCNModel, classification_loss, classify_forward
from .cove import AugmentedSequence, CoveEncoder, extract_cove
from .data import TokenBatch, make_batches
from .embeddings import EmbeddingTable, lookup_sequence
from .optim import Adam, SGDHalving, clip_grad_norm
from .seq2seq import (EncoderDecoderModel, decode_logits, encode, greedy_decode,
                      teacher_forced_loss)

logger = logging.getLogger(__name__)


class MetricsLog:
    """One JSON record per line: epoch, split, metric, value, lr."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        if self.path:
            self.path.write_text("", encoding="utf-8")

    def log(self, epoch: int, split: str, metric: str, value: float, lr: float | None = None) -> None:
        rec = {"epoch": epoch, "split": split, "metric": metric, "value": float(value),
               "lr": None if lr is None else float(lr)}
        self.records.append(rec)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")

    def values(self, split: str, metric: str) -> list[float]:
        return [r["value"] for r in self.records if r["split"] == split and r["metric"] == metric]


# ---------------------------------------------------------------- MT evaluation


def _mt_batches(pairs, batch_size: int = 64):
    return make_batches(pairs, batch_size)


def mt_scores(model: EncoderDecoderModel, pairs, batch_size: int = 64) -> tuple[float, int, int]:
    """(summed token NLL, correct argmax tokens, scored tokens) with teacher forcing."""
    was_training = model.training
    model.eval()
    nll_sum, correct, count = 0.0, 0, 0
    try:
        with T.no_grad():
            for batch in _mt_batches(pairs, batch_size):
                src, tgt = batch.fields
                mem = encode(model, src)
                logits = np.stack([lg.data for lg in decode_logits(model, mem, tgt)], axis=1)
                gold, mask = tgt.ids[:, 1:], tgt.mask[:, 1:]
                z = logits - logits.max(axis=-1, keepdims=True)
                logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
                picked = np.take_along_axis(logp, gold[..., None], axis=-1)[..., 0]
                nll_sum += float(-(picked * mask).sum())
                correct += int(((logits.argmax(axis=-1) == gold) & mask).sum())
                count += int(mask.sum())
    finally:
        model.train(was_training)
    return nll_sum, correct, count


def exact_match_rate(model: EncoderDecoderModel, pairs, max_len: int | None = None,
                     batch_size: int = 64) -> float:
    hits = 0
    for batch in _mt_batches(pairs, batch_size):
        src, tgt = batch.fields
        limit = max_len or int(tgt.lengths.max())
        hyps = greedy_decode(model, src, limit)
        for hyp, ref in zip(hyps, tgt.sequences()):
            hits += hyp == ref[1:-1]
    return hits / len(pairs)


def classifier_predictions(model: BCNModel, features: "FeatureSet", batch_size: int = 64) -> np.ndarray:
    was_training = model.training
    model.eval()
    preds = []
    try:
        with T.no_grad():
            for start in range(0, len(features), batch_size):
                idx = np.arange(start, min(start + batch_size, len(features)))
                sx, sy = features.batch(idx)
                preds.append(classify_forward(model, sx, sy).data.argmax(axis=-1))
    finally:
        model.train(was_training)
    return np.concatenate(preds)


def evaluate(model, dataset, metric: str) -> float:
    """perplexity / token_accuracy for an MT model over (src, tgt) id pairs;
    accuracy for a BCN over a FeatureSet (unknown labels, id -1, count as wrong)."""
    if len(dataset) == 0:
        raise ValueError("evaluate on an empty dataset")
    if metric == "perplexity":
        nll, _, count = mt_scores(model, dataset)
        return math.exp(nll / count)
    if metric == "token_accuracy":
        _, correct, count = mt_scores(model, dataset)
        return correct / count
    if metric == "accuracy":
        preds = classifier_predictions(model, dataset)
        return float(np.mean(preds == dataset.labels))
    raise ValueError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------- MT training


@dataclass
class TrainResult:
    best_epoch: int = 0
    best_value: float = float("nan")
    best_state: dict = field(default_factory=dict)
    epochs_run: int = 0


def make_optimizer(kind: str, lr: float, one_shot: bool = False):
    if kind == "sgd_halving":
        return SGDHalving(lr=lr, one_shot=one_shot)
    if kind == "adam":
        return Adam(lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def train_mt(model: EncoderDecoderModel, train_pairs, valid_pairs, *, epochs: int,
             batch_size: int, rng: np.random.Generator, optimizer=None, clip: float = 5.0,
             patience: int = 5, bucketing: bool = True, max_len: int | None = None,
             target_accuracy: float = 0.0, log: MetricsLog | None = None) -> TrainResult:
    """Teacher-forced training; keeps the state with the best validation perplexity.

    Stops early after ``patience`` epochs without improvement, or once
    validation token accuracy reaches ``target_accuracy`` (when > 0).
    """
    opt = optimizer or SGDHalving()
    log = log or MetricsLog()
    params = model.trainable_parameters()
    result = TrainResult()
    best_ppl, stale = float("inf"), 0
    for epoch in range(1, epochs + 1):
        model.train()
        lr = opt.lr
        total, n = 0.0, 0
        for batch in make_batches(train_pairs, batch_size, rng, bucketing, max_len):
            src, tgt = batch.fields
            model.zero_grad()
            loss = teacher_forced_loss(model, src, tgt)
            loss.backward()
            clip_grad_norm(params, clip)
            opt.step(params)
            total += float(loss.data) * src.size
            n += src.size
        nll, correct, count = mt_scores(model, valid_pairs)
        val_ppl, val_acc = math.exp(nll / count), correct / count
        log.log(epoch, "train", "loss", total / n, lr)
        log.log(epoch, "valid", "perplexity", val_ppl, lr)
        log.log(epoch, "valid", "token_accuracy", val_acc, lr)
        if isinstance(opt, SGDHalving):
            opt.epoch_end(val_ppl)
        logger.info("epoch %d loss %.4f val_ppl %.4f val_acc %.4f lr %g",
                    epoch, total / n, val_ppl, val_acc, lr)
        result.epochs_run = epoch
        if val_ppl < best_ppl:
            best_ppl, stale = val_ppl, 0
            result.best_epoch, result.best_value = epoch, val_ppl
            result.best_state = {k: v.copy() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= patience:
                break
        if target_accuracy and val_acc >= target_accuracy:
            break
    return result


# ---------------------------------------------------------------- classifier features


@dataclass
class FeatureSet:
    """Precomputed per-example input vectors for the BCN (frozen features)."""

    x: list[np.ndarray]
    y: list[np.ndarray] | None
    labels: np.ndarray
    blocks: tuple[tuple[str, int], ...]

    def __len__(self) -> int:
        return len(self.x)

    @property
    def width(self) -> int:
        return self.x[0].shape[1]

    def batch(self, idx) -> tuple[AugmentedSequence, AugmentedSequence | None]:
        sx = _pad([self.x[i] for i in idx], self.blocks)
        sy = None if self.y is None else _pad([self.y[i] for i in idx], self.blocks)
        return sx, sy


def _pad(rows: Sequence[np.ndarray], blocks) -> AugmentedSequence:
    steps = max(r.shape[0] for r in rows)
    out = np.zeros((len(rows), steps, rows[0].shape[1]))
    mask = np.zeros((len(rows), steps), dtype=bool)
    for b, r in enumerate(rows):
        out[b, :len(r)] = r
        mask[b, :len(r)] = True
    return AugmentedSequence(out, mask, blocks)


class Featurizer:
    """Turns id sequences into [GloVe; CoVe; char] rows.

    ``cove_mode`` is ``"on"``, ``"zero"`` (block present but zeroed, the
    GloVe-only baseline with identical architecture) or ``"off"``.
    """

    def __init__(self, glove: EmbeddingTable, cove: CoveEncoder | None = None,
                 char: EmbeddingTable | None = None, cove_mode: str = "on"):
        if cove_mode not in ("on", "zero", "off"):
            raise ValueError(f"cove_mode {cove_mode!r}")
        if cove_mode != "off" and cove is None:
            raise ValueError("CoVe features requested without an encoder")
        self.glove, self.cove, self.char, self.cove_mode = glove, cove, char, cove_mode

    @property
    def blocks(self) -> tuple[tuple[str, int], ...]:
        blocks = [("glove", self.glove.dim)]
        if self.cove_mode != "off":
            blocks.append(("cove", self.cove.width))
        if self.char is not None:
            blocks.append(("char", self.char.dim))
        return tuple(blocks)

    def __call__(self, seqs: Sequence[Sequence[int]], batch_size: int = 128) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for start in range(0, len(seqs), batch_size):
            chunk = seqs[start:start + batch_size]
            tb = TokenBatch.from_sequences(chunk)
            with T.no_grad():
                parts = [lookup_sequence(self.glove, tb.ids).data]
                if self.cove_mode == "on":
                    parts.append(extract_cove(self.cove, tb))
                elif self.cove_mode == "zero":
                    parts.append(np.zeros(tb.ids.shape + (self.cove.width,)))
                if self.char is not None:
                    parts.append(lookup_sequence(self.char, tb.ids).data)
            full = np.concatenate(parts, axis=-1)
            out.extend(full[b, :n].astype(np.float64) for b, n in enumerate(tb.lengths))
        return out

    def featurize(self, x_ids, labels, y_ids=None) -> FeatureSet:
        return FeatureSet(self(x_ids), None if y_ids is None else self(y_ids),
                          np.asarray(labels, dtype=np.int64), self.blocks)


def train_classifier(model: BCNModel, train: FeatureSet, valid: FeatureSet, *, epochs: int,
                     batch_size: int, rng: np.random.Generator, lr: float = 1e-3,
                     patience: int = 5, log: MetricsLog | None = None) -> TrainResult:
    """Adam training; keeps the state with the best validation accuracy."""
    opt = Adam(lr=lr)
    log = log or MetricsLog()
    params = model.trainable_parameters()
    result = TrainResult(best_value=-1.0)
    stale = 0
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            if len(idx) < 2:
                continue  # batch norm needs two examples
            sx, sy = train.batch(idx)
            model.zero_grad()
            loss = classification_loss(model, sx, train.labels[idx], sy)
            loss.backward()
            opt.step(params)
            total += float(loss.data) * len(idx)
        acc = evaluate(model, valid, "accuracy")
        log.log(epoch, "train", "loss", total / len(train), lr)
        log.log(epoch, "valid", "accuracy", acc, lr)
        logger.info("epoch %d loss %.4f val_acc %.4f", epoch, total / len(train), acc)
        result.epochs_run = epoch
        if acc > result.best_value:
            result.best_epoch, result.best_value, stale = epoch, acc, 0
            result.best_state = {k: v.copy() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= patience:
                break
    return result


def build_bcn(config: BCNConfig, seed: int) -> BCNModel:
    return BCNModel(config, np.random.default_rng(seed))
