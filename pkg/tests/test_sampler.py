import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from afn.config import GrammarConfig
from afn.datagen import Video, generate_dataset, generate_grammar
from afn.sampler import (
    SamplingError,
    assemble_batch,
    sample_clip,
    stack_channels,
    unstack_channels,
    window_segments,
)

SIZES = {"rgb": 3, "joints": 1, "limbs": 1, "flow": 2}


def make_video(segments, fps=4, vid="fx"):
    n = int(round(segments[-1][2] * fps))
    feats = {g: np.random.default_rng(0).standard_normal((n, c, 2, 2)).astype(np.float32) for g, c in SIZES.items()}
    return Video(vid, 0, [(a, float(s), float(e)) for a, s, e in segments], fps, feats).validate()


def test_chain_clip_labels():
    v = make_video([(0, 0, 3), (1, 3, 6)])
    c = sample_clip(v, t=1.0, end_label=2)
    assert (c.y_current, c.y_next, c.straddle) == (0, 1, False)
    assert c.horizon_fraction == pytest.approx(2 / 3)
    assert c.X.shape == (6, 7, 2, 2)


def test_window_ending_on_boundary_is_clean():
    v = make_video([(0, 0, 3), (1, 3, 6)])
    c = sample_clip(v, t=2.0, end_label=2)
    assert not c.straddle and c.y_current == 0


def test_last_segment_next_is_end():
    v = make_video([(0, 0, 3), (1, 3, 6)])
    assert sample_clip(v, t=5.0, end_label=2).y_next == 2


def test_one_second_action_exhaustive_scan():
    v = make_video([(0, 0, 2), (1, 2, 3), (0, 3, 5)])
    for t in np.arange(0, 4.01, 0.25):
        c = sample_clip(v, t=float(t), end_label=2)
        overlaps = [k for k, (_, s, e) in enumerate(v.segments) if max(s, t) < min(e, t + 1)]
        assert c.straddle == (len(overlaps) >= 2)
        if t == 2.0:
            assert c.y_current == 1 and not c.straddle
        elif 1.0 < t < 3.0:
            assert c.straddle


def test_short_video_rejected():
    v = make_video([(0, 0, 1)])
    with pytest.raises(SamplingError):
        sample_clip(v, np.random.default_rng(0), end_label=1)


def test_inference_t_out_of_range():
    v = make_video([(0, 0, 3)])
    with pytest.raises(SamplingError):
        sample_clip(v, t=2.5, end_label=1)


def test_too_many_straddles_names_video():
    v = make_video([(0, 0, 0.5), (1, 0.5, 1.5), (0, 1.5, 2.5)])
    with pytest.raises(SamplingError, match="fx"):
        sample_clip(v, np.random.default_rng(0), end_label=2, max_retries=32)


@given(st.integers(0, 10_000))
def test_train_clips_never_straddle_and_labels_in_video(seed):
    rng = np.random.default_rng(seed)
    v = make_video([(3, 0, 2), (1, 2, 5), (4, 5, 7)])
    c = sample_clip(v, rng, end_label=9)
    assert not c.straddle
    assert float(c.t).is_integer() and 0 <= c.t <= 6
    assert c.y_current in {3, 1, 4}
    assert 0 < c.horizon_fraction <= 1
    assert (c.horizon_fraction == 1) == (c.t in (0, 2, 5))


def test_straddle_agrees_with_brute_force_on_fractional_times():
    v = make_video([(0, 0, 2), (1, 2, 3), (2, 3, 6)])
    for t in np.linspace(0, 5, 41):
        c = sample_clip(v, t=float(t), end_label=3)
        assert c.straddle == (len(window_segments(v, float(t))) >= 2)


def test_train_label_frequencies_follow_durations():
    v = make_video([(0, 0, 1), (1, 1, 4)])
    rng = np.random.default_rng(0)
    counts = np.bincount([sample_clip(v, rng, end_label=2).y_current for _ in range(4000)], minlength=2)
    assert counts[0] / counts.sum() == pytest.approx(0.25, abs=0.03)


def test_frames_evenly_spaced():
    v = make_video([(0, 0, 3)], fps=12)
    c = sample_clip(v, t=1.0, end_label=1)
    expected = v.features["rgb"][[12, 14, 16, 18, 20, 22]]
    np.testing.assert_array_equal(c.X[:, :3], expected)


@pytest.fixture(scope="module")
def desk_videos():
    g = generate_grammar(GrammarConfig(), seed=0)
    return g, generate_dataset(g, 20, seed=0)


def test_batch_of_25(desk_videos):
    g, vids = desk_videos
    b = assemble_batch(vids, 25, np.random.default_rng(0), end_label=g.end_label)
    assert len(b) == 25 and 1 <= b.K <= 4
    assert b.stacked().shape == (25, 6, 7, 16, 16)


def test_batch_of_one(desk_videos):
    g, vids = desk_videos
    assert assemble_batch(vids, 1, np.random.default_rng(0), end_label=g.end_label).K == 1


def test_batch_deterministic(desk_videos):
    g, vids = desk_videos
    a = assemble_batch(vids, 25, np.random.default_rng(4), end_label=g.end_label)
    b = assemble_batch(vids, 25, np.random.default_rng(4), end_label=g.end_label)
    assert [(s.video_id, s.t) for s in a.samples] == [(s.video_id, s.t) for s in b.samples]


def test_empty_split():
    with pytest.raises(SamplingError):
        assemble_batch([], 5, np.random.default_rng(0), end_label=1)


def frames_fixture(zero=None):
    r = np.random.default_rng(1)
    return [{g: (np.zeros((c, 2, 2)) if g == zero else r.standard_normal((c, 2, 2))) for g, c in SIZES.items()} for _ in range(6)]


def test_stack_seven_channels():
    assert stack_channels(frames_fixture()).shape == (6, 7, 2, 2)


def test_zeroed_group_gives_zero_slice():
    X = stack_channels(frames_fixture(zero="limbs"))
    assert not X[:, 4].any() and X[:, 3].any()


def test_unstack_round_trip():
    frames = frames_fixture()
    back = unstack_channels(stack_channels(frames), SIZES)
    for a, b in zip(frames, back):
        for g in SIZES:
            np.testing.assert_array_equal(a[g], b[g])


def test_missing_group():
    frames = frames_fixture()
    del frames[2]["flow"]
    with pytest.raises(SamplingError, match="frame 2"):
        stack_channels(frames)
