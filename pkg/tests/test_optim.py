"""Momentum SGD and cosine annealing."""

import numpy as np
import pytest

from pcdistill.autodiff import Tensor
from pcdistill.optim import SGD, cosine_lr, sgd_step


def test_cosine_endpoints_and_midpoint():
    assert cosine_lr(0, 100, 0.2) == pytest.approx(0.2)
    assert cosine_lr(50, 100, 0.2) == pytest.approx(0.1)
    assert cosine_lr(100, 100, 0.2) == pytest.approx(0.0)


def test_cosine_monotone_decreasing():
    lrs = [cosine_lr(s, 40, 1.0) for s in range(41)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_cosine_rejects_zero_total():
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 0.1)


def test_sgd_two_step_momentum_oracle():
    # constant gradient g, no decay: after two steps p = p0 - lr*g - lr*(m*g + g)
    p = {"w": np.array([1.0])}
    v = {}
    g = {"w": np.array([2.0])}
    sgd_step(p, g, v, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert p["w"][0] == pytest.approx(1.0 - 0.1 * 2.0)
    sgd_step(p, {"w": np.array([2.0])}, v, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert p["w"][0] == pytest.approx(1.0 - 0.1 * 2.0 - 0.1 * (0.9 * 2.0 + 2.0))


def test_sgd_weight_decay_only():
    p = {"w": np.array([10.0])}
    sgd_step(p, {}, {}, lr=0.1, momentum=0.0, weight_decay=0.01)
    assert p["w"][0] == pytest.approx(10.0 - 0.1 * 0.01 * 10.0)


def test_sgd_missing_gradient_counts_as_zero():
    p = {"w": np.array([3.0]), "u": np.array([5.0])}
    v = {}
    sgd_step(p, {"w": np.array([1.0])}, v, lr=0.5, momentum=0.0, weight_decay=0.0)
    assert p["w"][0] == pytest.approx(2.5)
    assert p["u"][0] == pytest.approx(5.0)


def test_sgd_rejects_nonfinite_gradient():
    with pytest.raises(FloatingPointError):
        sgd_step({"w": np.array([1.0])}, {"w": np.array([np.nan])}, {}, 0.1, 0.9, 0.0)


def test_sgd_class_updates_tensors_in_place():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = SGD({"w": w}, momentum=0.0, weight_decay=0.0)
    w.grad = np.array([1.0, -1.0])
    opt.step(0.5)
    np.testing.assert_allclose(w.data, [0.5, 2.5])
    opt.zero_grad()
    assert w.grad is None


def test_sgd_class_velocity_persists():
    w = Tensor(np.array([0.0]), requires_grad=True)
    opt = SGD({"w": w}, momentum=0.5, weight_decay=0.0)
    w.grad = np.array([1.0])
    opt.step(1.0)
    w.grad = np.array([0.0])
    opt.step(1.0)  # pure momentum carry-over: v = 0.5
    np.testing.assert_allclose(w.data, [-1.5])
