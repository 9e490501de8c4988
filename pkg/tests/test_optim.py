import math

import numpy as np
import pytest

from coveforge import tensor as T
from coveforge.optim import (Adam, NonFiniteGradientError, SGDHalving, adam_step, clip_grad_norm,
                             sgd_halving_step)


def param(value, grad):
    p = T.Tensor(np.array(value, dtype=np.float64), requires_grad=True)
    p.grad = np.array(grad, dtype=np.float64)
    return p


def lr_trace(ppls, one_shot=False):
    opt = SGDHalving(lr=1.0, one_shot=one_shot)
    return [opt.epoch_end(p) for p in ppls]


def test_monotone_perplexity_keeps_rate():
    assert lr_trace([10, 9, 8, 7]) == [1, 1, 1, 1]


def test_first_rise_starts_halving_every_epoch():
    assert lr_trace([10, 9, 9.5, 8, 7]) == [1, 1, 0.5, 0.25, 0.125]


def test_one_shot_halves_once():
    assert lr_trace([10, 9, 9.5, 8, 7], one_shot=True) == [1, 1, 0.5, 0.5, 0.5]


def test_sgd_update_rule():
    p = param([0.0], [0.2])
    sgd_halving_step(SGDHalving(lr=1.0), {"p": p})
    assert p.data[0] == pytest.approx(-0.2, abs=1e-15)


def test_nonfinite_gradient_aborts():
    p = param([0.0, 1.0], [np.nan, 0.0])
    with pytest.raises(NonFiniteGradientError, match="p"):
        SGDHalving().step({"p": p})
    with pytest.raises(NonFiniteGradientError):
        Adam().step({"p": p})


def test_adam_first_step_is_sign():
    p = param([1.0, 1.0, 1.0], [0.3, -2.0, 1e-3])
    Adam(lr=0.01).step({"p": p})
    np.testing.assert_allclose(p.data, 1.0 - 0.01 * np.sign([0.3, -2.0, 1e-3]), rtol=1e-5)


def test_adam_zero_gradient_is_no_op():
    p = param([0.5, -0.5], [0.0, 0.0])
    Adam().step({"p": p})
    np.testing.assert_array_equal(p.data, [0.5, -0.5])


def test_adam_matches_scalar_recurrence_on_quadratic(f64):
    a, lr, b1, b2, eps = 3.0, 0.1, 0.9, 0.999, 1e-8
    theta, m, v = 2.0, 0.0, 0.0
    expected = []
    for t in range(1, 4):
        g = 2 * a * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        expected.append(theta)
    opt, p = Adam(lr=lr), param([2.0], [0.0])
    got = []
    for t in range(1, 4):
        p.grad = 2 * a * p.data.copy()
        adam_step(opt, {"p": p}, t)
        got.append(float(p.data[0]))
    np.testing.assert_allclose(got, expected, atol=1e-10, rtol=0)


def test_clip_global_norm():
    a, b = param([0.0], [3.0]), param([0.0], [4.0])
    norm = clip_grad_norm({"a": a, "b": b}, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0)
    c = param([0.0], [0.5])
    clip_grad_norm({"c": c}, 5.0)
    assert c.grad[0] == 0.5
