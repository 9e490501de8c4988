"""Parameterized building blocks: affine maps, LSTMs, dropout, batch norm, maxout."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ContractError, DimensionError, Tensor


class Parameter(Tensor):
    """A named-by-position leaf tensor owned by a Module.

    Frozen parameters (``requires_grad=False``) are still part of the model
    state and checkpoints; optimizers skip them.
    """

    __slots__ = ()

    def __init__(self, data, requires_grad: bool = True, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> dict[str, Parameter]:
        return {n: p for n, p in self.named_parameters() if p.requires_grad}

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise KeyError(f"missing parameters: {missing[:5]}")
        for name, arr in state.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {name}")
                continue
            if own[name].shape != arr.shape:
                raise DimensionError(
                    f"parameter {name}: shape {arr.shape} != expected {own[name].shape}")
            own[name].data = np.array(arr, dtype=own[name].dtype)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Affine(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(n_in)
        self.W = Parameter(uniform(rng, (n_out, n_in), bound))
        self.b = Parameter(np.zeros(n_out))

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.W, self.b)


# ---------------------------------------------------------------- LSTM


class LSTMCell(Module):
    """Gate order along the 4H axis is (input, forget, cell, output)."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(hidden)
        self.W_ih = Parameter(uniform(rng, (4 * hidden, n_in), bound))
        self.W_hh = Parameter(uniform(rng, (4 * hidden, hidden), bound))
        b = uniform(rng, 4 * hidden, bound)
        b[hidden:2 * hidden] = 1.0
        self.b = Parameter(b)

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[1]

    @property
    def n_in(self) -> int:
        return self.W_ih.shape[1]


def _gate_update(gates: Tensor, c_prev: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    H = hidden
    if_ = T.sigmoid(gates[..., :2 * H])
    i, f = if_[..., :H], if_[..., H:]
    g = T.tanh(gates[..., 2 * H:3 * H])
    o = T.sigmoid(gates[..., 3 * H:])
    c = f * c_prev + i * g
    h = o * T.tanh(c)
    return h, c


def lstm_cell_step(p: LSTMCell, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    if x.shape[-1] != p.n_in or h_prev.shape[-1] != p.hidden or c_prev.shape[-1] != p.hidden:
        raise DimensionError(
            f"lstm_cell_step: x {x.shape}, h {h_prev.shape}, c {c_prev.shape} do not fit "
            f"in={p.n_in}, H={p.hidden}")
    gates = T.linear(x, p.W_ih, p.b) + T.linear(h_prev, p.W_hh)
    return _gate_update(gates, c_prev, p.hidden)


def run_lstm(cell: LSTMCell, x: Tensor, mask: np.ndarray | None = None,
             reverse: bool = False) -> Tensor:
    """Run ``cell`` over x: (B, T, in) and return hidden states (B, T, H).

    Where ``mask`` is false the recurrent state is carried unchanged, so a
    reverse pass starts fresh at each sequence's last real token and padding
    never leaks into valid positions.
    """
    B, steps, _ = x.shape
    if steps < 1:
        raise ContractError("LSTM over an empty sequence")
    if x.shape[-1] != cell.n_in:
        raise DimensionError(f"LSTM input width {x.shape[-1]} != cell input {cell.n_in}")
    H = cell.hidden
    projected = T.linear(x, cell.W_ih, cell.b)
    h = T.zeros((B, H), dtype=x.dtype)
    c = T.zeros((B, H), dtype=x.dtype)
    outputs: list[Tensor | None] = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        gates = projected[:, t] + T.linear(h, cell.W_hh)
        h_new, c_new = _gate_update(gates, c, H)
        if mask is not None and not mask[:, t].all():
            keep = T.constant(mask[:, t, None].astype(x.dtype), dtype=x.dtype)
            drop = T.constant(1.0 - keep.data, dtype=x.dtype)
            h_new = keep * h_new + drop * h
            c_new = keep * c_new + drop * c
        h, c = h_new, c_new
        outputs[t] = h
    return T.stack(outputs, axis=1)


class BiLSTM(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.fw = LSTMCell(n_in, hidden, rng)
        self.bw = LSTMCell(n_in, hidden, rng)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        return T.concat([run_lstm(self.fw, x, mask), run_lstm(self.bw, x, mask, reverse=True)],
                        axis=-1)


class BiLSTMStack(Module):
    """Stacked biLSTM; layer k > 0 reads the full 2H output of layer k-1."""

    def __init__(self, n_in: int, hidden: int, depth: int = 1,
                 rng: np.random.Generator | None = None):
        if depth < 1:
            raise ContractError("BiLSTMStack depth must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.layers = [BiLSTM(n_in if k == 0 else 2 * hidden, hidden, rng) for k in range(depth)]

    @property
    def hidden(self) -> int:
        return self.layers[0].fw.hidden

    @property
    def n_in(self) -> int:
        return self.layers[0].fw.n_in

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    def __call__(self, x: Tensor, mask=None, dropout: "Dropout | None" = None) -> Tensor:
        for k, layer in enumerate(self.layers):
            if k > 0 and dropout is not None:
                x = dropout(x)
            x = layer(x, mask)
        return x


def bilstm_forward(stack: BiLSTMStack, xs: Tensor, mask=None) -> Tensor:
    """(T, in) or (B, T, in) -> (T, 2H) or (B, T, 2H)."""
    if xs.ndim == 2:
        if xs.shape[0] < 1:
            raise ContractError("bilstm_forward on an empty sequence")
        m = None if mask is None else np.asarray(mask, dtype=bool)[None]
        out = stack(T.reshape(xs, (1,) + xs.shape), m)
        return T.reshape(out, out.shape[1:])
    if xs.shape[1] < 1:
        raise ContractError("bilstm_forward on an empty sequence")
    return stack(xs, None if mask is None else np.asarray(mask, dtype=bool))


# ---------------------------------------------------------------- regularization


@dataclass
class DropoutSpec:
    ratio: float = 0.2
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"dropout ratio {self.ratio} outside [0, 1)")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"dropout mode {self.mode!r}")


def dropout_apply(spec: DropoutSpec, x: Tensor, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-ratio) at train time."""
    if spec.mode == "eval" or spec.ratio == 0.0:
        return x
    keep = 1.0 - spec.ratio
    scale = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return x * T.constant(scale, dtype=x.dtype)


class Dropout(Module):
    def __init__(self, ratio: float, rng: np.random.Generator | None = None):
        DropoutSpec(ratio)
        self.ratio = ratio
        self.rng = rng or np.random.default_rng(0)

    def __call__(self, x: Tensor) -> Tensor:
        spec = DropoutSpec(self.ratio, "train" if self.training else "eval")
        return dropout_apply(spec, x, self.rng)


class BatchNorm(Module):
    def __init__(self, dim: int, momentum: float = 0.1, epsilon: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.running_mean = Parameter(np.zeros(dim), requires_grad=False)
        self.running_var = Parameter(np.ones(dim), requires_grad=False)
        self.momentum = momentum
        self.epsilon = epsilon

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm_forward(self, x, "train" if self.training else "eval")


def batchnorm_forward(layer: BatchNorm, x: Tensor, mode: str) -> Tensor:
    if mode == "eval":
        scale = 1.0 / np.sqrt(layer.running_var.data + layer.epsilon)
        shift = T.constant(-layer.running_mean.data * scale, dtype=x.dtype)
        xhat = x * T.constant(scale, dtype=x.dtype) + shift
        return layer.gamma * xhat + layer.beta
    n = x.shape[0]
    if n < 2:
        raise ContractError(f"batch norm in train mode needs batch >= 2, got {n}")
    mean = T.tmean(x, axis=0)
    centered = x - mean
    var = T.tmean(centered * centered, axis=0)
    xhat = centered / T.sqrt(var + layer.epsilon)
    m = layer.momentum
    layer.running_mean.data = ((1 - m) * layer.running_mean.data + m * mean.data).astype(
        layer.running_mean.dtype)
    unbiased = var.data * n / (n - 1)
    layer.running_var.data = ((1 - m) * layer.running_var.data + m * unbiased).astype(
        layer.running_var.dtype)
    return layer.gamma * xhat + layer.beta


class Maxout(Module):
    def __init__(self, n_in: int, n_out: int, channels: int = 4,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.channels = [Affine(n_in, n_out, rng) for _ in range(channels)]

    @property
    def n_out(self) -> int:
        return self.channels[0].n_out

    def __call__(self, x: Tensor) -> Tensor:
        return maxout_forward(self, x)


def maxout_forward(layer: Maxout, x: Tensor) -> Tensor:
    """Elementwise max over channel affine maps; ties go to the lowest channel."""
    return T.amax(T.stack([ch(x) for ch in layer.channels], axis=-1), axis=-1)
