"""Model-level checkpoint helpers and the tiny instances used by gradient checks."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import tensor as T
from .bcn import BCNConfig, BCNModel, classification_loss
from .checkpoint import CheckpointError, load_checkpoint, load_into, save_checkpoint
from .cove import CoveEncoder, concat_inputs
from .data import TokenBatch
from .embeddings import EmbeddingTable, Vocabulary
from .gradcheck import GradCheckReport, fd_gradient_check
from .layers import (Affine, BatchNorm, BiLSTMStack, DropoutSpec, LSTMCell, Maxout,
                     bilstm_forward, dropout_apply, lstm_cell_step)
from .optim import Adam
from .seq2seq import EncoderDecoderModel, teacher_forced_loss


# ---------------------------------------------------------------- MT checkpoints


def save_mt(path: str | Path, model: EncoderDecoderModel, src_vocab: Vocabulary,
            tgt_vocab: Vocabulary, optimizer=None, config: dict | None = None) -> None:
    params = dict(model.state_dict())
    opt_state = None
    if optimizer is not None:
        opt_state = optimizer.state()
        if isinstance(optimizer, Adam):
            for name, arr in optimizer.m.items():
                params[f"optim.m.{name}"] = arr
                params[f"optim.v.{name}"] = optimizer.v[name]
    meta = {"kind": "mt", "model": model.config(), "src_vocab": src_vocab.content_tokens(),
            "tgt_vocab": tgt_vocab.content_tokens(), "optimizer": opt_state,
            "config": config or {}}
    save_checkpoint(path, params, meta)


def load_mt(path: str | Path) -> tuple[EncoderDecoderModel, Vocabulary, Vocabulary, dict]:
    params, meta = load_checkpoint(path)
    if meta.get("kind") != "mt":
        raise CheckpointError(f"{path} is not a translation checkpoint")
    cfg = meta["model"]
    dtype = params["src_table.matrix"].dtype
    table = EmbeddingTable(np.zeros((cfg["src_vocab"], cfg["src_dim"]), dtype=dtype))
    model = EncoderDecoderModel(table, cfg["tgt_vocab"], hidden=cfg["hidden"], tgt_dim=cfg["tgt_dim"],
                                dropout=cfg["dropout"], depth=cfg["depth"])
    model.astype(dtype)
    load_into(model, params)
    return model, Vocabulary(meta["src_vocab"]), Vocabulary(meta["tgt_vocab"]), meta


def load_cove_encoder(path: str | Path) -> tuple[CoveEncoder, Vocabulary, dict]:
    """Rebuild only the MT-LSTM and its source table from a translation checkpoint."""
    params, meta = load_checkpoint(path)
    if meta.get("kind") != "mt":
        raise CheckpointError(f"{path} is not a translation checkpoint")
    cfg = meta["model"]
    table_arr = params.get("src_table.matrix")
    if table_arr is None:
        raise CheckpointError("checkpoint lacks parameter src_table.matrix")
    if table_arr.shape[1] != cfg["src_dim"]:
        raise CheckpointError(
            f"embedding width {table_arr.shape[1]} != encoder input {cfg['src_dim']}")
    stack = BiLSTMStack(cfg["src_dim"], cfg["hidden"], cfg["depth"])
    stack.astype(table_arr.dtype)
    load_into(stack, params, prefix="encoder.")
    return CoveEncoder(stack, EmbeddingTable(table_arr)), Vocabulary(meta["src_vocab"]), meta


# ---------------------------------------------------------------- BCN checkpoints


def save_bcn(path: str | Path, model: BCNModel, vocab: Vocabulary, labels: list[str],
             glove: EmbeddingTable, cove: CoveEncoder | None, char: EmbeddingTable | None,
             cove_mode: str, config: dict | None = None) -> None:
    params = {f"bcn.{k}": v for k, v in model.state_dict().items()}
    params["glove.matrix"] = glove.matrix.data
    if cove is not None:
        params.update({f"cove.{k}": v for k, v in cove.state_dict().items()})
    if char is not None:
        params["char.matrix"] = char.matrix.data
    meta = {"kind": "bcn", "bcn": model.cfg.to_dict(), "labels": labels,
            "vocab": vocab.content_tokens(), "cove_mode": cove_mode,
            "cove": None if cove is None else {"hidden": cove.encoder.hidden,
                                               "depth": len(cove.encoder.layers),
                                               "src_dim": cove.src_table.dim},
            "config": config or {}}
    save_checkpoint(path, params, meta)


def load_bcn(path: str | Path):
    """-> (model, vocab, labels, glove, cove, char, cove_mode)."""
    params, meta = load_checkpoint(path)
    if meta.get("kind") != "bcn":
        raise CheckpointError(f"{path} is not a classifier checkpoint")
    cfg = BCNConfig(**meta["bcn"])
    model = BCNModel(cfg)
    model.astype(params["bcn.v1"].dtype)
    load_into(model, params, prefix="bcn.")
    glove = EmbeddingTable(params["glove.matrix"])
    cove = None
    if meta["cove"] is not None:
        c = meta["cove"]
        stack = BiLSTMStack(c["src_dim"], c["hidden"], c["depth"])
        stack.astype(params["glove.matrix"].dtype)
        load_into(stack, params, prefix="cove.encoder.")
        cove = CoveEncoder(stack, EmbeddingTable(params["cove.src_table.matrix"]))
    char = EmbeddingTable(params["char.matrix"]) if "char.matrix" in params else None
    return model, Vocabulary(meta["vocab"]), meta["labels"], glove, cove, char, meta["cove_mode"]


# ---------------------------------------------------------------- gradient-check instances


def tiny_mt(seed: int = 0, vocab: int = 20, hidden: int = 8, dim: int = 6):
    """64-bit seq2seq instance plus a fixed batch (T <= 5) and its loss closure."""
    rng = np.random.default_rng(seed)
    with T.precision("f64"):
        table = EmbeddingTable(rng.normal(size=(vocab, dim)))
        model = EncoderDecoderModel(table, vocab, hidden=hidden, tgt_dim=dim, dropout=0.0, rng=rng)
    model.astype(np.float64)
    src = TokenBatch.from_sequences([list(rng.integers(4, vocab, size=5)),
                                     list(rng.integers(4, vocab, size=3))])
    tgt = TokenBatch.from_sequences([[2] + list(rng.integers(4, vocab, size=3)) + [3],
                                     [2] + list(rng.integers(4, vocab, size=2)) + [3]])
    model.eval()
    return model, lambda: teacher_forced_loss(model, src, tgt)


def tiny_bcn(seed: int = 0, steps: int = 4, dim: int = 8, classes: int = 3, batch: int = 3):
    """64-bit BCN on two distinct input sequences; batch norm in train mode."""
    rng = np.random.default_rng(seed)
    cfg = BCNConfig(input_dim=dim, classes=classes, f_dim=dim, hidden=4, integ_hidden=3,
                    dropout=0.0)
    with T.precision("f64"):
        model = BCNModel(cfg, rng)
    model.astype(np.float64)
    mask_x = np.ones((batch, steps), dtype=bool)
    mask_x[1, 3:] = False
    mask_y = np.ones((batch, steps), dtype=bool)
    mask_y[2, 2:] = False
    sx = concat_inputs(rng.normal(size=(batch, steps, dim)), None, mask=mask_x)
    sy = concat_inputs(rng.normal(size=(batch, steps, dim)), None, mask=mask_y)
    labels = rng.integers(0, classes, size=batch)
    model.train()
    return model, lambda: classification_loss(model, sx, labels, sy)


def _layer_instance(name: str, rng: np.random.Generator):
    x = T.Tensor(rng.normal(size=(3, 5)), dtype=np.float64)
    if name == "affine":
        layer = Affine(5, 4, rng).astype(np.float64)
        return layer.trainable_parameters(), lambda: T.tsum(T.tanh(layer(x)) ** 2)
    if name == "lstm_cell":
        cell = LSTMCell(5, 4, rng).astype(np.float64)
        h0 = T.Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
        c0 = T.Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
        def loss():
            h, c = lstm_cell_step(cell, x, h0, c0)
            h, c = lstm_cell_step(cell, x * 0.5, h, c)
            return T.tsum(h * h) + T.tsum(c)
        return cell.trainable_parameters(), loss
    if name == "bilstm":
        stack = BiLSTMStack(5, 3, depth=2, rng=rng).astype(np.float64)
        xs = T.Tensor(rng.normal(size=(2, 4, 5)), dtype=np.float64)
        mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
        return stack.trainable_parameters(), lambda: T.tsum(T.tanh(bilstm_forward(stack, xs, mask)))
    if name == "batchnorm":
        bn = BatchNorm(5).astype(np.float64)
        bn.gamma.data = rng.normal(size=5)
        w = T.Tensor(rng.normal(size=(3, 5)), dtype=np.float64)
        return bn.trainable_parameters(), lambda: T.tsum(bn(x) * w)
    if name == "maxout":
        layer = Maxout(5, 4, 4, rng).astype(np.float64)
        return layer.trainable_parameters(), lambda: T.tsum(T.tanh(layer(x)))
    if name == "dropout":
        w = T.Tensor(rng.normal(size=(3, 5)), requires_grad=True, dtype=np.float64)
        return {"w": w}, lambda: T.tsum(dropout_apply(DropoutSpec(0.3), w * x,
                                                      np.random.default_rng(7)))
    raise KeyError(name)


LAYER_CHECKS = ("affine", "lstm_cell", "bilstm", "batchnorm", "maxout", "dropout")


def run_gradcheck(target: str, seed: int = 0, eps: float = 1e-5, tol: float = 1e-4,
                  max_entries: int | None = 40) -> GradCheckReport:
    """Gradient check for ``mt``, ``bcn`` or ``layer:<name>`` at 64-bit precision."""
    rng = np.random.default_rng(seed + 1)
    if target == "mt":
        model, loss = tiny_mt(seed)
        params = model.trainable_parameters()
    elif target == "bcn":
        model, loss = tiny_bcn(seed)
        params = model.trainable_parameters()
    elif target.startswith("layer:"):
        params, loss = _layer_instance(target.split(":", 1)[1], np.random.default_rng(seed))
    else:
        raise KeyError(f"unknown gradcheck target {target!r}")
    return fd_gradient_check(params, loss, eps=eps, tol=tol, max_entries=max_entries, rng=rng)
