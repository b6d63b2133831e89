import numpy as np
import pytest
from pydantic import ValidationError

from exceptions import NumericalError, ShapeError, TapeError
from settings import Settings
from tensor_engine import operations as ops
from tensor_engine.models import DTYPE, Mode, RunningStats, Tape, Tensor

from .oracles import (
    loop_batchnorm2d,
    loop_conv2d,
    loop_conv2d_input_grad,
    loop_linear,
    loop_maxpool2d,
)

RANDOM_CASES = range(100)


@pytest.mark.parametrize("case", RANDOM_CASES)
def test_conv2d_matches_loop_reference(case):
    rng = np.random.default_rng(case)
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    kernel, stride, padding = rng.integers(1, 5), rng.integers(1, 4), rng.integers(0, 3)
    h = rng.integers(max(1, kernel - 2 * padding), 8)
    w = rng.integers(max(1, kernel - 2 * padding), 8)
    x = Tensor(rng.normal(size=(n, c, h, w)), requires_grad=True)
    weight = rng.normal(size=(o, c, kernel, kernel))
    bias = rng.normal(size=o) if case % 2 else None
    with Tape() as tape:
        out = ops.conv2d(
            x, Tensor(weight), None if bias is None else Tensor(bias), stride, padding
        )
        grad = rng.normal(size=out.shape)
        loss = ops.sum_all(ops.mul(out, Tensor(grad)))
    tape.backward(loss)
    expected = loop_conv2d(x.data, weight, bias, stride, padding)
    assert out.shape == expected.shape
    np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-12)
    d_x = loop_conv2d_input_grad(grad, weight, x.shape, stride, padding)
    np.testing.assert_allclose(x.grad, d_x, rtol=0, atol=1e-12)


@pytest.mark.parametrize("case", RANDOM_CASES)
def test_maxpool_matches_loop_reference(case):
    rng = np.random.default_rng(1000 + case)
    kernel = int(rng.integers(1, 4))
    padding, stride = int(rng.integers(0, kernel // 2 + 1)), int(rng.integers(1, 4))
    size = (rng.integers(1, 3), rng.integers(1, 4), *rng.integers(kernel, 8, size=2))
    x = rng.normal(size=size)
    out = ops.maxpool2d(Tensor(x), kernel, stride, padding)
    np.testing.assert_array_equal(out.data, loop_maxpool2d(x, kernel, stride, padding))


@pytest.mark.parametrize("case", RANDOM_CASES)
def test_batchnorm_matches_loop_reference(case):
    rng = np.random.default_rng(2000 + case)
    n, c, h, w = rng.integers(1, 4), rng.integers(1, 4), *rng.integers(1, 5, size=2)
    if n * h * w < 2:
        n = 2
    x = rng.normal(rng.normal(), rng.uniform(0.5, 3.0), size=(n, c, h, w))
    gamma, beta = rng.normal(size=c), rng.normal(size=c)
    train = ops.batchnorm2d(
        Tensor(x), Tensor(gamma), Tensor(beta), RunningStats.fresh(c), Mode.TRAIN
    )
    expected = loop_batchnorm2d(x, gamma, beta, 1e-5)
    np.testing.assert_allclose(train.data, expected, rtol=0, atol=1e-10)

    mean, var = rng.normal(size=c), rng.uniform(0.1, 4.0, size=c)
    stats = RunningStats(mean.copy(), var.copy(), True)
    frozen = ops.batchnorm2d(Tensor(x), Tensor(gamma), Tensor(beta), stats, Mode.EVAL)
    expected = loop_batchnorm2d(x, gamma, beta, 1e-5, mean, var)
    np.testing.assert_allclose(frozen.data, expected, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(stats.mean, mean)


@pytest.mark.parametrize("case", RANDOM_CASES)
def test_linear_matches_loop_reference(case):
    rng = np.random.default_rng(3000 + case)
    n, d, k = rng.integers(1, 6), rng.integers(1, 7), rng.integers(1, 5)
    x, w, b = rng.normal(size=(n, d)), rng.normal(size=(d, k)), rng.normal(size=k)
    out = ops.linear(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, loop_linear(x, w, b), rtol=0, atol=1e-12)


def test_batchnorm_constant_channels_normalize_to_zero(rng):
    levels = rng.normal(size=3)
    x = np.broadcast_to(levels.reshape(1, 3, 1, 1), (4, 3, 5, 5)).copy()
    out = ops.batchnorm2d(
        Tensor(x),
        Tensor(rng.normal(size=3)),
        Tensor(np.zeros(3)),
        RunningStats.fresh(3),
        Mode.TRAIN,
    )
    np.testing.assert_allclose(out.data, 0.0, atol=1e-9)


def test_conv2d_identity_kernel_returns_input(rng):
    x = rng.normal(size=(1, 1, 5, 5))
    weight = np.ones((1, 1, 1, 1))
    out = ops.conv2d(Tensor(x), Tensor(weight))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 4, 3, 3))))


def test_maxpool_gradient_goes_to_first_maximum():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum_all(ops.maxpool2d(x, kernel=2, stride=2))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_batchnorm_train_normalizes_channels(rng):
    x = rng.normal(3.0, 2.0, size=(4, 2, 3, 3))
    stats = RunningStats.fresh(2)
    out = ops.batchnorm2d(
        Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), stats, Mode.TRAIN
    )
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, atol=1e-4)
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean(axis=(0, 2, 3)))
    assert stats.initialized


def test_batchnorm_eval_with_unit_stats_is_affine(rng):
    x = rng.normal(size=(2, 2, 3, 3))
    gamma, beta = np.array([2.0, -1.0]), np.array([0.5, 0.25])
    out = ops.batchnorm2d(
        Tensor(x),
        Tensor(gamma),
        Tensor(beta),
        RunningStats.explicit(2),
        Mode.EVAL,
        eps=0.0,
    )
    expected = x * gamma.reshape(1, 2, 1, 1) + beta.reshape(1, 2, 1, 1)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_batchnorm_eval_requires_initialized_stats(rng):
    with pytest.raises(ValueError):
        ops.batchnorm2d(
            Tensor(rng.normal(size=(1, 2, 2, 2))),
            Tensor(np.ones(2)),
            Tensor(np.zeros(2)),
            RunningStats.fresh(2),
            Mode.EVAL,
        )


def test_batchnorm_train_needs_two_values():
    with pytest.raises(ShapeError):
        ops.batchnorm2d(
            Tensor(np.ones((1, 1, 1, 1))),
            Tensor(np.ones(1)),
            Tensor(np.zeros(1)),
            RunningStats.fresh(1),
            Mode.TRAIN,
        )


def test_adaptive_avg_pool_exact_bins(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    out = ops.adaptive_avg_pool2d(Tensor(x), 2)
    expected = x.reshape(1, 2, 2, 2, 2, 2).mean(axis=(3, 5))
    np.testing.assert_allclose(out.data, expected)


def test_no_broadcasting():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


def test_repeat_along_gradient_sums(rng):
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum_all(ops.repeat_along(a, 1, 4))
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, np.full((2, 3), 4.0))


def test_gradient_accumulates_over_consumers():
    a = Tensor([2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.add(ops.mul(a, a), a)
    tape.backward(loss)
    np.testing.assert_allclose(a.grad, [5.0])


def test_second_backward_adds_to_leaf_grads():
    a = Tensor([2.0, -1.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum_all(ops.mul(a, a))
    tape.backward(loss)
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, [8.0, -4.0])
    a.zero_grad()
    assert a.grad is None


def test_sigmoid_is_stable_for_large_inputs():
    out = ops.sigmoid(Tensor([-1000.0, 0.0, 1000.0]))
    np.testing.assert_allclose(out.data, [0.0, 0.5, 1.0])


def test_bce_at_zero_scores_is_ln2_per_choice():
    targets = np.eye(8)[[3, 5]]
    loss = ops.bce_with_logits(Tensor(np.zeros((2, 8))), targets)
    assert abs(loss.item() - 16 * np.log(2.0)) < 1e-12


def test_bce_matches_direct_formula(rng):
    scores = rng.normal(size=(3, 8))
    targets = np.eye(8)[[0, 4, 7]]
    p = 1.0 / (1.0 + np.exp(-scores))
    expected = -np.sum(targets * np.log(p) + (1 - targets) * np.log(1 - p))
    loss = ops.bce_with_logits(Tensor(scores), targets)
    assert abs(loss.item() - expected) < 1e-10


def test_bce_rejects_non_one_hot():
    with pytest.raises(ValueError):
        ops.bce_with_logits(Tensor(np.zeros((1, 8))), np.full((1, 8), 0.125))


def test_dropout_eval_is_identity(rng):
    x = Tensor(rng.normal(size=(4, 4)))
    assert ops.dropout(x, 0.5, Mode.EVAL) is x


def test_dropout_train_keeps_expectation():
    x = Tensor(np.ones((200, 200)))
    out = ops.dropout(x, 0.5, Mode.TRAIN, np.random.default_rng(0))
    assert set(np.unique(out.data)) <= {0.0, 2.0}
    assert abs(out.data.mean() - 1.0) < 0.05


def test_non_finite_result_raises():
    with pytest.raises(NumericalError):
        ops.scale(Tensor([1e308]), 10.0)


def test_backward_requires_scalar(rng):
    a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    with Tape() as tape:
        out = ops.scale(a, 2.0)
    with pytest.raises(TapeError):
        tape.backward(out)


def test_backward_rejects_loss_from_other_tape():
    a = Tensor([1.0], requires_grad=True)
    with Tape():
        loss = ops.scale(a, 2.0)
    with pytest.raises(TapeError):
        Tape().backward(loss)


def test_operations_outside_tape_are_not_recorded():
    a = Tensor([1.0], requires_grad=True)
    out = ops.scale(a, 3.0)
    assert out.is_leaf


def test_tensor_dtype_comes_from_settings():
    assert DTYPE is np.float64
    assert Tensor([1, 2]).data.dtype == np.float64
    assert Settings(TENSOR_DTYPE="float32").TENSOR_DTYPE == "float32"
    with pytest.raises(ValidationError):
        Settings(TENSOR_DTYPE="float16")
