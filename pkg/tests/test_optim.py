import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from afn.autodiff import NumericError, OptimizerState, Tensor, adam_step, clip_by_global_norm, global_norm, step_decay_lr


def test_clip_scales_norm_five_to_one():
    g = [np.array([3.0, 0.0]), np.array([[4.0]])]
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    np.testing.assert_allclose(clipped[0], [0.6, 0.0])
    np.testing.assert_allclose(clipped[1], [[0.8]])


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.floats(0.01, 10))
def test_clip_never_increases_norm(values, max_norm):
    g = [np.array(values)]
    clipped, before = clip_by_global_norm(g, max_norm)
    after = global_norm(clipped)
    assert after <= before + 1e-9
    assert after <= max_norm + 1e-9 or before <= max_norm


def test_lr_schedule():
    assert step_decay_lr(0) == pytest.approx(1e-4)
    assert step_decay_lr(2999) == pytest.approx(1e-4)
    assert step_decay_lr(3000) == pytest.approx(9e-5)
    assert step_decay_lr(6000) == pytest.approx(8.1e-5)


def test_adam_matches_hand_recurrence():
    p = Tensor(np.array([0.5]), requires_grad=True)
    state = OptimizerState(base_lr=1e-2, clip=None)
    g = 0.3
    x, m, v = 0.5, 0.0, 0.0
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, 11):
        adam_step({"p": p}, {"p": np.array([g])}, state)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= 1e-2 * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert abs(p.data[0] - x) < 1e-12
    assert state.step == 10


def test_adam_clips_before_moments():
    p = Tensor(np.zeros(2), requires_grad=True)
    state = OptimizerState(base_lr=1.0, clip=1.0)
    out = adam_step({"p": p}, {"p": np.array([30.0, 40.0])}, state)
    assert out["grad_norm"] == pytest.approx(50.0)
    np.testing.assert_allclose(state.m["p"], 0.1 * np.array([0.6, 0.8]))


def test_adam_nan_names_parameter():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(NumericError, match="weird.weight"):
        adam_step({"weird.weight": p}, {"weird.weight": np.array([np.nan, 0.0])}, OptimizerState())
    assert not p.data.any()


def test_step_counter_strictly_increases():
    p = Tensor(np.zeros(1), requires_grad=True)
    state = OptimizerState()
    steps = []
    for _ in range(5):
        adam_step({"p": p}, {"p": np.ones(1)}, state)
        steps.append(state.step)
    assert steps == sorted(set(steps))
    assert state.m["p"].shape == p.data.shape == state.v["p"].shape
