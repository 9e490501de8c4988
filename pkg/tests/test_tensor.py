import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coveforge import tensor as T
from coveforge.gradcheck import fd_gradient_check, relative_error


def loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.matmul(T.Tensor(np.eye(2)), T.Tensor(x)).data, x)


def test_matmul_projector_selects_row():
    out = T.matmul(T.Tensor([[1.0, 0.0], [0.0, 0.0]]), T.Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[5, 6], [0, 0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    out = T.matmul(T.Tensor(a), T.Tensor(b)).data
    assert np.max(np.abs(out - loop_matmul(a, b))) <= 1e-6


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


# ---------------------------------------------------------------- softmax


def test_softmax_symmetric_pair():
    np.testing.assert_allclose(T.softmax(T.Tensor([0.0, 0.0])).data, [0.5, 0.5])


@pytest.mark.parametrize("c", [-30.0, 0.0, 2.5, 700.0])
def test_softmax_constant_is_uniform(c, f64):
    np.testing.assert_allclose(T.softmax(T.Tensor([c, c, c])).data, [1 / 3] * 3, rtol=1e-12)


def test_softmax_hand_value():
    e = math.e
    np.testing.assert_allclose(T.softmax(T.Tensor([1.0, 2.0])).data, [1 / (1 + e), e / (1 + e)],
                               atol=1e-6)
    np.testing.assert_allclose(T.softmax(T.Tensor([1.0, 2.0])).data, [0.26894, 0.73106], atol=1e-5)


def test_softmax_mask_gives_exact_zero():
    p = T.softmax(T.Tensor([[3.0, 1.0, 9.0]]), mask=np.array([[True, True, False]])).data
    assert p[0, 2] == 0.0
    assert abs(p.sum() - 1) < 1e-6


def test_softmax_all_masked_is_contract_error():
    with pytest.raises(T.ContractError):
        T.softmax(T.Tensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


def test_softmax_rows_rejects_vectors():
    with pytest.raises(T.DimensionError):
        T.softmax_rows(T.Tensor([1.0, 2.0]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 9))
def test_softmax_rows_sum_to_one_and_are_nonnegative(seed, rows, cols):
    r = np.random.default_rng(seed)
    x = r.normal(scale=20, size=(rows, cols))
    mask = r.random((rows, cols)) < 0.7
    mask[np.arange(rows), r.integers(0, cols, rows)] = True
    p = T.softmax(T.Tensor(x), axis=-1, mask=mask).data
    assert np.all(p >= 0)
    assert np.all(p[~mask] == 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- elementwise, concat


def test_relu_tanh_sigmoid_values():
    np.testing.assert_array_equal(T.relu(T.Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert T.tanh(T.Tensor(0.0)).data == 0.0
    assert T.sigmoid(T.Tensor(0.0)).data == 0.5


def test_concat_and_split_recover_blocks(rng):
    np.testing.assert_array_equal(T.concat([T.Tensor([1.0, 2.0]), T.Tensor([3.0])]).data, [1, 2, 3])
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
    joined = T.concat([T.Tensor(a), T.Tensor(b)], axis=-1).data
    np.testing.assert_array_equal(joined[:, :3], a.astype(np.float32))
    np.testing.assert_array_equal(joined[:, 3:], b.astype(np.float32))


def test_broadcast_mismatch_is_dimension_error():
    with pytest.raises(T.DimensionError):
        T.Tensor(np.ones((2, 3))) + T.Tensor(np.ones((4,)))


# ---------------------------------------------------------------- masked reductions


def test_masked_max_all_valid():
    x = T.Tensor([[1.0], [5.0], [3.0]])
    np.testing.assert_array_equal(T.masked_reduce(x, np.array([True, True, True]), "max").data, [5])


def test_masked_max_excludes_masked_row():
    x = T.Tensor([[1.0], [5.0], [3.0]])
    np.testing.assert_array_equal(T.masked_reduce(x, np.array([True, False, True]), "max").data, [3])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["max", "mean", "min"]))
def test_masked_reduce_of_constant_rows_is_the_row(seed, kind):
    r = np.random.default_rng(seed)
    c = r.normal(size=4)
    steps = int(r.integers(1, 7))
    mask = r.random(steps) < 0.6
    mask[int(r.integers(steps))] = True
    out = T.masked_reduce(T.Tensor(np.tile(c, (steps, 1)), dtype=np.float64), mask, kind).data
    np.testing.assert_allclose(out, c, rtol=1e-12)


def test_masked_reduce_empty_mask():
    with pytest.raises(T.EmptyPoolError):
        T.masked_reduce(T.Tensor(np.ones((2, 3))), np.array([False, False]), "mean")


# ---------------------------------------------------------------- backward


def test_linear_sum_gradient_is_outer_pattern(f64):
    W = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x = np.array([0.5, -1.0, 2.0])
    T.tsum(T.matmul(W, T.constant(x))).backward()
    np.testing.assert_array_equal(W.grad, np.outer(np.ones(2), x))


def test_half_squared_norm_gradient_is_identity(f64):
    p = T.Tensor([1.5, -2.0, 0.25], requires_grad=True)
    (T.tsum(p * p) * 0.5).backward()
    np.testing.assert_array_equal(p.grad, p.data)


def test_non_scalar_loss_rejected():
    with pytest.raises(T.ContractError):
        T.backward(T.Tensor([1.0, 2.0], requires_grad=True) * 2.0)


def test_gradients_accumulate_over_shared_use(f64):
    x = T.Tensor([2.0], requires_grad=True)
    T.tsum(x * x + x * 3.0).backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_no_grad_records_nothing():
    x = T.Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_checked_mode_flags_nonfinite():
    with T.checked_mode():
        with pytest.raises(T.NonFiniteError):
            T.log(T.Tensor([0.0, -1.0]))


def test_precision_switch_changes_dtype():
    assert T.Tensor([1.0]).dtype == np.float32
    with T.precision("f64"):
        assert T.Tensor([1.0]).dtype == np.float64


# ---------------------------------------------------------------- gradient oracle


def test_quadratic_gradcheck_is_near_exact(f64):
    p = T.Tensor(np.random.default_rng(0).normal(size=5), requires_grad=True)
    rep = fd_gradient_check({"p": p}, lambda: T.tsum(p * p) * 0.5, eps=1e-5)
    assert rep.max_rel_error <= 1e-8


def test_softmax_cross_entropy_gradcheck(f64, rng):
    W = T.Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    x = T.constant(rng.normal(size=(3, 6)))
    targets = np.array([0, 3, 1])
    rep = fd_gradient_check({"W": W}, lambda: T.cross_entropy(T.linear(x, W), targets))
    assert rep.max_rel_error <= 1e-6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gradcheck_reports_nonfinite_as_failure(f64):
    p = T.Tensor([1e-6], requires_grad=True)
    rep = fd_gradient_check({"p": p}, lambda: T.tsum(T.log(p)), eps=1e-5)
    assert not rep.passed
    assert "non-finite" in rep.format()


def test_gradcheck_requires_64_bit():
    p = T.Tensor([1.0], requires_grad=True)
    with pytest.raises(T.ContractError):
        fd_gradient_check({"p": p}, lambda: T.tsum(p * p))


def test_relative_error_floor():
    assert relative_error(1e-9, 2e-9) == pytest.approx(1e-9)
    assert relative_error(100.0, 101.0) == pytest.approx(1 / 101)


OPS = {
    "tanh": lambda a, b: T.tanh(a) * b,
    "sigmoid": lambda a, b: T.sigmoid(a) + b * a,
    "exp": lambda a, b: T.exp(a * 0.3) - b,
    "div": lambda a, b: a / (T.exp(b) + 1.0),
    "softmax": lambda a, b: T.softmax(a + b, axis=-1) * a,
    "log_softmax": lambda a, b: T.log_softmax(a * b, axis=0),
    "matmul": lambda a, b: T.matmul(a, T.swap_last(b)),
    "concat": lambda a, b: T.concat([a, b * a], axis=-1) ** 2,
    "stack": lambda a, b: T.stack([a, b], axis=0) * 1.5,
    "getitem": lambda a, b: a[:, ::-1] * b[0],
    "mean": lambda a, b: T.tmean(a * b, axis=0),
    "masked_mean": lambda a, b: T.masked_reduce(a * b, None, "mean", axis=0),
    "sqrt": lambda a, b: T.sqrt(a * a + b * b + 1.0),
}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(sorted(OPS)), st.integers(1, 3), st.integers(1, 4))
def test_random_graph_gradients_match_finite_differences(seed, op, rows, cols):
    with T.precision("f64"):
        r = np.random.default_rng(seed)
        a = T.Tensor(r.normal(size=(rows, cols)), requires_grad=True)
        b = T.Tensor(r.normal(size=(rows, cols)), requires_grad=True)
        w = T.constant(r.normal(size=OPS[op](a, b).shape))
        rep = fd_gradient_check({"a": a, "b": b}, lambda: T.tsum(OPS[op](a, b) * w))
    assert rep.passed, rep.format()
