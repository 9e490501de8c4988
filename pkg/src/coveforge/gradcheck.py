"""Central finite-difference oracle for autodiff gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import ContractError, Tensor, backward


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    entries: int
    worst_index: tuple = ()
    analytic: float = 0.0
    numeric: float = 0.0
    note: str = ""

    def ok(self, tol: float) -> bool:
        return np.isfinite(self.max_rel_error) and self.max_rel_error <= tol


@dataclass
class GradCheckReport:
    tol: float
    eps: float
    checks: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.ok(self.tol) for c in self.checks)

    @property
    def worst(self) -> ParamCheck:
        return max(self.checks, key=lambda c: (not np.isfinite(c.max_rel_error), c.max_rel_error))

    @property
    def max_rel_error(self) -> float:
        return self.worst.max_rel_error if self.checks else 0.0

    def format(self) -> str:
        lines = []
        for c in self.checks:
            flag = "ok  " if c.ok(self.tol) else "FAIL"
            extra = f"  ({c.note})" if c.note else ""
            lines.append(f"{flag} {c.name:<40s} max_rel_err={c.max_rel_error:.3e} "
                         f"entries={c.entries}{extra}")
        w = self.worst
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: worst {w.name} rel_err={w.max_rel_error:.3e} "
                     f"(analytic {w.analytic:.6e}, numeric {w.numeric:.6e}) tol={self.tol:g}")
        return "\n".join(lines)


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def fd_gradient_check(params: Mapping[str, Tensor], loss_fn: Callable[[], Tensor],
                      eps: float = 1e-5, tol: float = 1e-4, max_entries: int | None = None,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare autodiff gradients of ``loss_fn()`` against central differences.

    ``params`` maps names to leaf tensors that ``loss_fn`` reads. At most
    ``max_entries`` coordinates per parameter are probed (sampled with ``rng``);
    ``None`` probes all of them. ``loss_fn`` must be deterministic.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps={eps} outside [1e-7, 1e-3]")
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ContractError(f"gradient check needs 64-bit parameters; {name} is {p.dtype}")
    rng = rng or np.random.default_rng(0)

    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = GradCheckReport(tol=tol, eps=eps)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idxs = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idxs = np.arange(n)
        check = ParamCheck(name, 0.0, len(idxs))
        grad_flat = analytic[name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                check.max_rel_error = float("inf")
                check.worst_index = np.unravel_index(i, p.shape)
                check.note = "non-finite loss under perturbation"
                break
            numeric = (up - down) / (2 * eps)
            err = relative_error(float(grad_flat[i]), numeric)
            if err >= check.max_rel_error:
                check.max_rel_error = err
                check.worst_index = tuple(int(k) for k in np.unravel_index(i, p.shape))
                check.analytic = float(grad_flat[i])
                check.numeric = numeric
        report.checks.append(check)
    return report
