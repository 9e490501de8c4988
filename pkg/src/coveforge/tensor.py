"""Dense tensors with tape-recorded reverse-mode differentiation.

Every differentiable primitive records its inputs and a backward rule on the
output tensor. ``backward`` orders the recorded graph topologically and pushes
gradients from a scalar loss to every reachable leaf that requires them.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}

_state = {"dtype": np.float32, "checked": False, "grad": True}


class DimensionError(ValueError):
    pass


class ContractError(ValueError):
    pass


class EmptyPoolError(ContractError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _state["dtype"] = _DTYPES[name]


def get_dtype():
    return _state["dtype"]


def precision_name(dtype=None) -> str:
    dtype = np.dtype(dtype or _state["dtype"])
    return "f64" if dtype == np.float64 else "f32"


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    old = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = old


def set_checked(enabled: bool) -> None:
    _state["checked"] = bool(enabled)


@contextlib.contextmanager
def checked_mode(enabled: bool = True) -> Iterator[None]:
    old = _state["checked"]
    _state["checked"] = enabled
    try:
        yield
    finally:
        _state["checked"] = old


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


class Tensor:
    """An ndarray plus the bookkeeping needed to differentiate through it."""

    __array_priority__ = 1000
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        self.data = arr.astype(dtype or _state["dtype"], copy=False)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.data.dtype if like is not None else None)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    if _state["checked"] and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- graph


class TapeGraph:
    """Topologically ordered record of the operations that produced ``root``."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        self.inputs: dict[int, tuple[int, ...]] = {}
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in self.nodes:
            self.inputs[id(node)] = tuple(id(p) for p in node._parents)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._parents and n.requires_grad]


def backward(loss: Tensor, graph: TapeGraph | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = graph or TapeGraph(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (unbroadcast(g / b.data, a.shape),
                            unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    return _make(a.data ** exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return _make(np.where(active, x.data, 0).astype(x.dtype), (x,),
                 lambda g: (g * active,), "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)
    return _make(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


# ---------------------------------------------------------------- shape


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Reverse all axes, or permute them when ``axes`` is given."""
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inverse = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inverse),), "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis
               for i in items)


def getitem(x: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), bw, "slice")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of zero tensors")
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
                t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise DimensionError(
                f"concat along axis {axis}: incompatible shapes "
                f"{[tt.shape for tt in tensors]}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def bw(g):
        return tuple(np.moveaxis(g, ax, 0))

    return _make(out, tensors, bw, "stack")


# ---------------------------------------------------------------- reductions


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / count)


def masked_reduce(x: Tensor, mask=None, kind: str = "max", axis: int = -2) -> Tensor:
    """Reduce ``x`` over ``axis`` using only positions where ``mask`` is true.

    ``mask`` has the shape of ``x`` without its trailing feature axis (for the
    default ``axis=-2``), e.g. x: (B, T, d) with mask (B, T). Max/min send the
    gradient to the first arg-extreme position; mean spreads it uniformly.
    """
    ax = axis % x.ndim
    if mask is None:
        m = np.ones(x.shape[:ax + 1], dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
    mshape = m.shape + (1,) * (x.ndim - m.ndim)
    m_b = np.broadcast_to(m.reshape(mshape), x.shape)
    counts = m_b.sum(axis=ax, keepdims=True)
    if np.any(counts == 0):
        raise EmptyPoolError("masked_reduce over a sequence with no valid positions")

    if kind == "mean":
        out = np.where(m_b, x.data, 0).sum(axis=ax, keepdims=True) / counts
        out = out.astype(x.dtype)

        def bw(g):
            return (np.where(m_b, np.expand_dims(g, ax) / counts, 0).astype(x.dtype),)

        return _make(np.squeeze(out, ax), (x,), bw, "masked_mean")

    if kind not in ("max", "min"):
        raise ValueError(f"unknown reduction {kind!r}")
    fill = -np.inf if kind == "max" else np.inf
    filled = np.where(m_b, x.data, fill)
    idx = (np.argmax if kind == "max" else np.argmin)(filled, axis=ax)
    idx_k = np.expand_dims(idx, ax)
    out = np.take_along_axis(x.data, idx_k, axis=ax)

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx_k, np.expand_dims(g, ax), axis=ax)
        return (full,)

    return _make(np.squeeze(out, ax), (x,), bw, f"masked_{kind}")


def amax(x: Tensor, axis: int) -> Tensor:
    """Maximum over ``axis``; ties resolve to the lowest index."""
    ax = axis % x.ndim
    idx_k = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    out = np.take_along_axis(x.data, idx_k, axis=ax)

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx_k, np.expand_dims(g, ax), axis=ax)
        return (full,)

    return _make(np.squeeze(out, ax), (x,), bw, "amax")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs at least 1-D operands, got {a.shape} and {b.shape}")
    if a.ndim == 1:
        out = matmul(reshape(a, (1, -1)), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        out = matmul(a, reshape(b, (-1, 1)))
        return reshape(out, out.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot broadcast {a.shape} @ {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` for weight stored as (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        grads = [(g2 @ weight.data).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out.reshape(lead + (weight.shape[0],)), parents, bw, "linear")


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; output shape is ``ids.shape + (d,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"token id out of range [0, {table.shape[0]}): min {ids.min()}, max {ids.max()}")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(table.data[ids], (table,), bw, "take_rows")


def pick(x: Tensor, index, axis: int = -1) -> Tensor:
    """Select one entry per slice along ``axis`` (``take_along_axis`` semantics)."""
    ax = axis % x.ndim
    idx_k = np.expand_dims(np.asarray(index, dtype=np.int64), ax)
    out = np.take_along_axis(x.data, idx_k, axis=ax)

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx_k, np.expand_dims(g, ax), axis=ax)
        return (full,)

    return _make(np.squeeze(out, ax), (x,), bw, "pick")


# ---------------------------------------------------------------- softmax family


def _mask_like(x: Tensor, mask, axis: int) -> np.ndarray | None:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    try:
        m = np.broadcast_to(m, x.shape)
    except ValueError:
        raise DimensionError(f"softmax mask shape {m.shape} does not fit {x.shape}") from None
    if np.any(~m.any(axis=axis)):
        raise ContractError("softmax over a slice with every position masked")
    return m


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Numerically stable softmax; masked positions get exactly zero weight."""
    m = _mask_like(x, mask, axis)
    z = x.data if m is None else np.where(m, x.data, -1e9).astype(x.dtype)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    if m is not None:
        e = np.where(m, e, 0).astype(x.dtype)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw, "softmax")


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
    return softmax(x, axis=-1)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), bw, "log_softmax")


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over unmasked positions."""
    logp = log_softmax(logits, axis=-1)
    nll = -pick(logp, targets, axis=-1)
    if mask is None:
        return tmean(nll)
    m = np.asarray(mask, dtype=logits.dtype)
    count = m.sum()
    if count == 0:
        raise ContractError("cross_entropy with no valid positions")
    return tsum(nll * m) * (1.0 / count)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape), dtype=dtype)


def parameters_finite(tensors: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(t.data)) for t in tensors)
