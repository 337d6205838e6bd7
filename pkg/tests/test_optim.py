"""Optimizer semantics: hand-iterated Adam recurrence, AdamW decay, step
counting, and the non-finite-gradient skip path."""

import numpy as np
import pytest

from afguide.nn import Tensor, adam, adamw


def _param(value):
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def test_zero_grads_leave_adam_params_unchanged():
    p = _param([1.0, -2.0, 3.0])
    opt = adam([p], lr=1e-2)
    p.grad = np.zeros(3)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])


def test_zero_grads_adamw_applies_only_decay():
    p = _param([1.0, -2.0])
    opt = adamw([p], lr=1e-2, weight_decay=0.1)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * (1.0 - 1e-2 * 0.1), rtol=1e-15)


def test_constant_grad_matches_hand_iterated_recurrence():
    lr, b1, b2, eps, g = 1e-3, 0.9, 0.999, 1e-8, 0.37
    p = _param(0.5)
    opt = adam([p], lr=lr)
    # independent scalar recurrence
    x, m, v = 0.5, 0.0, 0.0
    for t in range(1, 51):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        p.grad = np.array(g)
        opt.step()
        assert abs(float(p.data) - x) < 1e-10, f"diverged at step {t}"


def test_adamw_constant_grad_matches_hand_iterated_recurrence():
    lr, b1, b2, eps, wd, g = 1e-3, 0.9, 0.999, 1e-8, 1e-4, -0.8
    p = _param(1.25)
    opt = adamw([p], lr=lr, weight_decay=wd)
    x, m, v = 1.25, 0.0, 0.0
    for t in range(1, 31):
        x = x * (1 - lr * wd)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        p.grad = np.array(g)
        opt.step()
        assert abs(float(p.data) - x) < 1e-10


def test_step_counter_increments_once_per_call():
    p = _param([1.0])
    opt = adam([p], lr=1e-3)
    for expected in range(1, 6):
        p.grad = np.ones(1)
        opt.step()
        assert opt.step_count == expected


def test_nonfinite_grad_skips_step_and_counts_incident():
    p = _param([1.0, 2.0])
    opt = adam([p], lr=1e-1)
    p.grad = np.array([np.nan, 0.0])
    applied = opt.step()
    assert not applied
    assert opt.skipped_steps == 1
    assert opt.step_count == 0
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert p.grad is None  # grads cleared even on skip
    assert np.all(opt.m[0] == 0.0)  # moments untouched by the bad batch


def test_grads_zeroed_after_step():
    p = _param([1.0])
    opt = adam([p], lr=1e-3)
    p.grad = np.ones(1)
    opt.step()
    assert p.grad is None


def test_params_stay_finite_across_steps(rng):
    p = Tensor(rng.normal(size=16), requires_grad=True)
    opt = adamw([p], lr=1e-2)
    for _ in range(100):
        p.grad = rng.normal(size=16) * 100.0
        opt.step()
        assert np.all(np.isfinite(p.data))


def test_plain_adam_rejects_weight_decay():
    from afguide.nn.optim import Optimizer

    with pytest.raises(ValueError):
        Optimizer([_param(1.0)], 1e-3, "adam", weight_decay=0.1)
    with pytest.raises(ValueError):
        Optimizer([_param(1.0)], 1e-3, "sgd")
