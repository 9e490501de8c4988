"""Biattentive classification network over [GloVe; CoVe; char] inputs."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .cove import AugmentedSequence
from .layers import Affine, BatchNorm, BiLSTMStack, Dropout, Maxout, Module, Parameter
from .tensor import ContractError, DimensionError, Tensor


@dataclass
class BCNConfig:
    input_dim: int
    classes: int
    f_dim: int = 300
    hidden: int = 300
    integ_hidden: int = 300
    f_depth: int = 1
    activation: str = "relu"
    channels: int = 4
    reductions: tuple[int, int] = (2, 2)
    dropout: float = 0.2

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"activation must be relu or tanh, got {self.activation!r}")
        self.reductions = tuple(self.reductions)

    def head_widths(self) -> list[int]:
        joined = 8 * 2 * self.integ_hidden
        first = max(1, joined // self.reductions[0])
        second = max(1, first // self.reductions[1])
        return [joined, first, second, self.classes]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reductions"] = list(self.reductions)
        return d


class BCNModel(Module):
    def __init__(self, config: BCNConfig, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        c = self.cfg = config
        dims = [c.input_dim] + [c.f_dim] * c.f_depth
        self.f_net = [Affine(dims[k], dims[k + 1], rng) for k in range(c.f_depth)]
        self.task_bilstm = BiLSTMStack(c.f_dim, c.hidden, 1, rng)
        self.integ_x = BiLSTMStack(3 * 2 * c.hidden, c.integ_hidden, 1, rng)
        self.integ_y = BiLSTMStack(3 * 2 * c.hidden, c.integ_hidden, 1, rng)
        bound = 1.0 / np.sqrt(2 * c.integ_hidden)
        self.v1 = Parameter(rng.uniform(-bound, bound, 2 * c.integ_hidden))
        self.d1 = Parameter(np.zeros(1))
        self.v2 = Parameter(rng.uniform(-bound, bound, 2 * c.integ_hidden))
        self.d2 = Parameter(np.zeros(1))
        widths = c.head_widths()
        self.head_norms = [BatchNorm(widths[k]) for k in range(3)]
        self.head = [Maxout(widths[k], widths[k + 1], c.channels, rng) for k in range(3)]
        self.drop = Dropout(c.dropout, np.random.default_rng(rng.integers(2**32)))

    def activation(self, x: Tensor) -> Tensor:
        return T.relu(x) if self.cfg.activation == "relu" else T.tanh(x)


def _batched(x: Tensor, mask) -> tuple[Tensor, np.ndarray, bool]:
    if x.ndim == 2:
        m = np.ones(x.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        return T.reshape(x, (1,) + x.shape), m[None], True
    m = np.ones(x.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return x, m, False


def encode_task(model: BCNModel, seq: AugmentedSequence) -> Tensor:
    """f (feedforward + activation) per token, then the shared task biLSTM."""
    if seq.width != model.cfg.input_dim:
        raise DimensionError(f"input width {seq.width} != model input_dim {model.cfg.input_dim}")
    x, mask, single = _batched(T.constant(seq.vectors, dtype=model.v1.dtype), seq.mask)
    for layer in model.f_net:
        x = model.activation(layer(model.drop(x)))
    out = model.task_bilstm(x, mask)
    return T.reshape(out, out.shape[1:]) if single else out


def biattend(X: Tensor, Y: Tensor, mask_x=None, mask_y=None):
    """Affinity A = X Y^T normalized over x (A_x) and over y (A_y).

    Returns (C_x, C_y, A_x, A_y): C_x = A_x^T X summarizes x for every y
    position (Ty rows); C_y = A_y^T Y summarizes y for every x position
    (Tx rows). A_x has shape (Tx, Ty) with columns summing to 1; A_y has
    shape (Ty, Tx), also column-normalized.
    """
    if X.shape[-1] != Y.shape[-1]:
        raise ContractError(f"biattention width mismatch: {X.shape} vs {Y.shape}")
    Xb, mx, single = _batched(X, mask_x)
    Yb, my, _ = _batched(Y, mask_y)
    A = T.matmul(Xb, T.swap_last(Yb))                        # (B, Tx, Ty)
    A_x = T.softmax(A, axis=1, mask=mx[:, :, None])
    A_y = T.softmax(T.swap_last(A), axis=1, mask=my[:, :, None])
    C_x = T.matmul(T.swap_last(A_x), Xb)                      # (B, Ty, d)
    C_y = T.matmul(T.swap_last(A_y), Yb)                      # (B, Tx, d)
    if single:
        C_x, C_y, A_x, A_y = (T.reshape(t, t.shape[1:]) for t in (C_x, C_y, A_x, A_y))
    return C_x, C_y, A_x, A_y


def integrate(stack: BiLSTMStack, X: Tensor, C: Tensor, mask=None) -> Tensor:
    """biLSTM over [X; X - C; X * C]."""
    if X.shape != C.shape:
        raise DimensionError(f"integrate: X {X.shape} and context {C.shape} differ")
    feats = T.concat([X, X - C, X * C], axis=-1)
    if feats.shape[-1] != stack.n_in:
        raise DimensionError(f"integration input width {feats.shape[-1]} != {stack.n_in}")
    xb, m, single = _batched(feats, mask)
    out = stack(xb, m)
    return T.reshape(out, out.shape[1:]) if single else out


def self_attention_weights(X_cond: Tensor, v: Tensor, d: Tensor, mask=None) -> Tensor:
    xb, m, single = _batched(X_cond, mask)
    scores = T.reshape(T.matmul(xb, v), xb.shape[:2]) + d
    beta = T.softmax(scores, axis=-1, mask=m)
    return T.reshape(beta, beta.shape[1:]) if single else beta


def pool(X_cond: Tensor, v: Tensor, d: Tensor, mask=None) -> Tensor:
    """[max; mean; min; self-attentive sum] over valid steps."""
    xb, m, single = _batched(X_cond, mask)
    if np.any(~m.any(axis=-1)):
        raise ContractError("pooling over a sequence with no valid steps")
    beta = self_attention_weights(xb, v, d, m)                  # (B, T)
    x_self = T.reshape(T.matmul(T.reshape(beta, (beta.shape[0], 1, beta.shape[1])), xb),
                       (xb.shape[0], xb.shape[2]))
    pooled = T.concat([T.masked_reduce(xb, m, "max"), T.masked_reduce(xb, m, "mean"),
                       T.masked_reduce(xb, m, "min"), x_self], axis=-1)
    return T.reshape(pooled, pooled.shape[1:]) if single else pooled


def joined_representation(model: BCNModel, seq_x: AugmentedSequence,
                          seq_y: AugmentedSequence | None = None) -> Tensor:
    X = encode_task(model, seq_x)
    if seq_y is None or seq_y is seq_x:
        # single-sentence input: y is a duplicate of x
        seq_y, Y = seq_x, X
    else:
        Y = encode_task(model, seq_y)
    C_x, C_y, _, _ = biattend(X, Y, seq_x.mask, seq_y.mask)
    X_cond = integrate(model.integ_x, X, C_y, seq_x.mask)
    Y_cond = integrate(model.integ_y, Y, C_x, seq_y.mask)
    x_pool = pool(X_cond, model.v1, model.d1, seq_x.mask)
    y_pool = pool(Y_cond, model.v2, model.d2, seq_y.mask)
    return T.concat([x_pool, y_pool], axis=-1)


def classify_forward(model: BCNModel, seq_x: AugmentedSequence,
                     seq_y: AugmentedSequence | None = None) -> Tensor:
    """Class log-probabilities, (B, classes) or (classes,) for one example.

    In train mode the batch-normalized head needs at least two examples.
    """
    h = joined_representation(model, seq_x, seq_y)
    single = h.ndim == 1
    if single:
        h = T.reshape(h, (1, -1))
    for norm, maxout in zip(model.head_norms, model.head):
        h = maxout(norm(model.drop(h)))
    logp = T.log_softmax(h, axis=-1)
    return T.reshape(logp, logp.shape[1:]) if single else logp


def classification_loss(model: BCNModel, seq_x: AugmentedSequence, labels,
                        seq_y: AugmentedSequence | None = None) -> Tensor:
    logp = classify_forward(model, seq_x, seq_y)
    return -T.tmean(T.pick(logp, np.asarray(labels), axis=-1))
