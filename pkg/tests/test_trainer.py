import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from afn import model as M
from afn.autodiff import Tensor
from afn.config import RunConfig
from afn.sampler import assemble_batch
from afn.trainer import (
    LOG_COLUMNS,
    CheckpointError,
    LossWeights,
    init_state,
    load_checkpoint,
    loss_terms,
    one_hot,
    save_checkpoint,
    total_loss,
    train,
    train_step,
    update_weights,
)


def small_config(**trainer):
    cfg = RunConfig(seed=3)
    cfg.model.dtype = "float64"
    cfg.sampler.batch_size = 8
    for k, v in trainer.items():
        setattr(cfg.trainer, k, v)
    return cfg


@pytest.fixture
def state(chain_grammar, chain_videos):
    return init_state(small_config(), chain_grammar.n_actions, 2, 7, 16, chain_videos)


# -- losses ---------------------------------------------------------------------
class FakeTrace:
    def __init__(self, y_now, y_next, aux):
        self.y_now, self.y_next, self.aux = Tensor(y_now), Tensor(y_next), Tensor(aux)


def test_perfect_predictions_give_tiny_losses():
    tr = FakeTrace(one_hot([1, 2], 3), one_hot([3, 0], 4), one_hot([1, 2], 3))
    for L in loss_terms(tr, [1, 2], [3, 0]):
        assert L.data.max() <= 1e-7


def test_uniform_predictions_give_log_k():
    tr = FakeTrace(np.full((2, 5), 0.2), np.full((2, 6), 1 / 6), np.full((2, 5), 0.2))
    L1, L2, L3 = loss_terms(tr, [0, 4], [5, 1])
    np.testing.assert_allclose(L1.data, np.log(5))
    np.testing.assert_allclose(L2.data, np.log(6))
    np.testing.assert_allclose(L3.data, np.log(5))


def test_class_count_mismatch():
    tr = FakeTrace(np.full((1, 5), 0.2), np.full((1, 5), 0.2), np.full((1, 5), 0.2))
    with pytest.raises(ValueError):
        loss_terms(tr, [0], [1])


@pytest.mark.parametrize(
    "alpha,beta,expected",
    [(0, 0, "L3"), (0, 1, "L3"), (1, 1, "L2"), (1, 0, "L1"), (0.5, 0, "half13"), (1, 0.5, "half12")],
)
def test_regime_identities(alpha, beta, expected):
    L1, L2, L3 = 0.3, 1.7, 2.9
    want = {"L3": L3, "L2": L2, "L1": L1, "half13": 0.5 * (L1 + L3), "half12": 0.5 * (L1 + L2)}[expected]
    assert abs(total_loss(L1, L2, L3, alpha, beta) - want) < 1e-12


def test_direct_algebra():
    assert total_loss(1, 2, 3, 0.8, 0.5) == pytest.approx(1.8, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
def test_general_form(a, b, l1, l2, l3):
    assert abs(total_loss(l1, l2, l3, a, b) - (a * (1 - b) * l1 + a * b * l2 + (1 - a) * l3)) < 1e-12


def test_weights_carry_no_gradient():
    L = [Tensor(np.array([v]), requires_grad=True) for v in (1.0, 2.0, 3.0)]
    out = total_loss(*L, 0.25, 0.5)
    out.backward(np.ones(1))
    assert [float(x.grad[0]) for x in L] == [0.125, 0.125, 0.75]


def test_update_weights_raw_and_ema():
    w = update_weights([1, 2, 3, 4], [1, 0, 3, 0], [1, 2, 3, 4], LossWeights())
    assert (w.alpha, w.beta) == (1.0, 0.5)
    e = LossWeights(smoothing="ema", ema=0.9)
    e = e.updated(0.0, 0.0).updated(1.0, 1.0)
    assert e.alpha == pytest.approx(0.1) and e.beta == pytest.approx(0.1)
    with pytest.raises(ValueError):
        update_weights([], [], [], LossWeights())


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20))
def test_ema_monotone_under_monotone_inputs(raw):
    raw = sorted(raw)
    w = LossWeights(smoothing="ema", ema=0.9)
    prev = 0.0
    for r in raw:
        w = w.updated(r, r)
        assert w.alpha >= prev - 1e-12 and 0 <= w.alpha <= 1
        prev = w.alpha


# -- steps ------------------------------------------------------------------------
def test_step_zero_is_pure_l3(state, chain_videos, chain_grammar):
    batch = assemble_batch(chain_videos, 8, np.random.default_rng(0), end_label=chain_grammar.end_label)
    row = train_step(state, batch)
    assert row["step"] == 0 and row["alpha"] == 0.0 and row["beta"] == 0.0
    assert row["L_tot"] == pytest.approx(row["L3"] + 0.1 * row["proto_loss"], rel=1e-9) or math.isnan(row["proto_loss"])
    assert set(LOG_COLUMNS) == set(row)


def test_step_writes_memory_after_batch(state, chain_videos, chain_grammar):
    batch = assemble_batch(chain_videos, 8, np.random.default_rng(0), end_label=chain_grammar.end_label)
    train_step(state, batch)
    for c in batch.samples:
        assert state.bank.count(c.video_id, c.t) >= 1


def test_two_runs_identical(chain_grammar, chain_videos):
    losses = []
    for _ in range(2):
        st_ = init_state(small_config(), chain_grammar.n_actions, 2, 7, 16, chain_videos)
        losses.append([r["L_tot"] for r in train(st_, chain_videos, 12)])
    assert losses[0] == losses[1]


def test_resume_matches_uninterrupted(tmp_path, chain_grammar, chain_videos):
    a = init_state(small_config(), chain_grammar.n_actions, 2, 7, 16, chain_videos)
    full = [r["L_tot"] for r in train(a, chain_videos, 20)]
    b = init_state(small_config(), chain_grammar.n_actions, 2, 7, 16, chain_videos)
    first = [r["L_tot"] for r in train(b, chain_videos, 10)]
    save_checkpoint(b, tmp_path / "c.npz")
    c = load_checkpoint(tmp_path / "c.npz")
    rest = [r["L_tot"] for r in train(c, chain_videos, 10)]
    assert first + rest == full


def test_step_zero_checkpoint_equals_fresh(tmp_path, state):
    save_checkpoint(state, tmp_path / "c.npz")
    back = load_checkpoint(tmp_path / "c.npz")
    assert back.step == 0 and back.bank == state.bank
    for k in state.params:
        np.testing.assert_array_equal(back.params[k].data, state.params[k].data)
    assert back.rng.bit_generator.state == state.rng.bit_generator.state


def test_truncated_checkpoint(tmp_path, state):
    path = tmp_path / "c.npz"
    save_checkpoint(state, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_version_mismatch(tmp_path, state, monkeypatch):
    import afn.trainer as T

    monkeypatch.setattr(T, "CHECKPOINT_VERSION", 99)
    save_checkpoint(state, tmp_path / "c.npz")
    monkeypatch.setattr(T, "CHECKPOINT_VERSION", 1)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "c.npz")


def test_log_file_appends(tmp_path, state, chain_videos):
    log = tmp_path / "log.csv"
    train(state, chain_videos, 3, log_path=log)
    train(state, chain_videos, 2, log_path=log)
    lines = log.read_text().splitlines()
    assert lines[0].split(",") == LOG_COLUMNS
    assert [int(l.split(",")[0]) for l in lines[1:]] == [0, 1, 2, 3, 4]
    assert all(math.isfinite(float(l.split(",")[5])) for l in lines[1:])


def test_gamma_zero_detached_u_leaves_main_grads(chain_grammar, chain_videos):
    """With u detached, the episodic term only reaches q1; other gradients are identical with or without it."""
    grads = []
    for gamma in (0.0, 0.1):
        cfg = small_config(gamma=gamma)
        cfg.model.detach_u = True
        cfg.model.dropout = 0.0
        s = init_state(cfg, chain_grammar.n_actions, 2, 7, 16, chain_videos)
        batch = assemble_batch(chain_videos, 8, np.random.default_rng(0), end_label=chain_grammar.end_label)
        s.opt.base_lr = 0.0
        train_step(s, batch)
        grads.append({k: p.grad for k, p in s.params.items() if p.grad is not None})
    for k, g in grads[0].items():
        if k.startswith(("q0.", "q2.", "head_", "b_", "advisory.")):
            np.testing.assert_array_equal(g, grads[1][k])


def test_refresh_memory_writes_every_slot(state, chain_videos):
    from afn.trainer import refresh_memory

    refresh_memory(state, chain_videos[:3])
    for v in chain_videos[:3]:
        assert (state.bank.counts(v.video_id) == 1).all()
