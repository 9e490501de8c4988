"""SGD with validation-triggered halving, Adam, and global-norm clipping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


def check_finite(params: Mapping[str, Tensor]) -> None:
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.sum(~np.isfinite(p.grad)))
            raise NonFiniteGradientError(
                f"non-finite gradient in {name}: {bad} of {p.grad.size} entries")


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return total


@dataclass
class SGDHalving:
    """Plain SGD whose rate halves once validation perplexity first rises.

    By default the rate then keeps halving every epoch; with ``one_shot`` it
    halves only at the first increase.
    """

    lr: float = 1.0
    one_shot: bool = False
    halving_armed: bool = False
    best_val_ppl: float = float("inf")
    prev_val_ppl: float | None = None

    def step(self, params: Mapping[str, Tensor]) -> None:
        check_finite(params)
        for p in params.values():
            if p.grad is not None:
                p.data -= (self.lr * p.grad).astype(p.dtype)

    def epoch_end(self, val_ppl: float) -> float:
        if not self.halving_armed:
            if self.prev_val_ppl is not None and val_ppl > self.prev_val_ppl:
                self.halving_armed = True
                self.lr *= 0.5
        elif not self.one_shot:
            self.lr *= 0.5
        self.prev_val_ppl = val_ppl
        self.best_val_ppl = min(self.best_val_ppl, val_ppl)
        return self.lr

    def state(self) -> dict:
        return {"kind": "sgd_halving", "lr": self.lr, "one_shot": self.one_shot,
                "halving_armed": self.halving_armed, "best_val_ppl": self.best_val_ppl,
                "prev_val_ppl": self.prev_val_ppl}


def sgd_halving_step(opt: SGDHalving, params: Mapping[str, Tensor],
                     val_ppl_after_epoch: float | None = None) -> float:
    """Apply one update; when an epoch's validation perplexity is given, update the rate."""
    opt.step(params)
    if val_ppl_after_epoch is not None:
        return opt.epoch_end(val_ppl_after_epoch)
    return opt.lr


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Mapping[str, Tensor]) -> None:
        check_finite(params)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype)

    def state(self) -> dict:
        return {"kind": "adam", "lr": self.lr, "t": self.t}


def adam_step(opt: Adam, params: Mapping[str, Tensor], t: int | None = None) -> None:
    if t is not None:
        if t < 1:
            raise ValueError("adam step index must be >= 1")
        opt.t = t - 1
    opt.step(params)
