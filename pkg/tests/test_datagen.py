import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from afn.config import GrammarConfig
from afn.datagen import (
    ActivityGrammar,
    DatasetMeta,
    GenerationError,
    GrammarError,
    ParseError,
    Video,
    chain_transitions,
    generate_dataset,
    generate_grammar,
    make_grammar,
    oracle_accuracy_enumerated,
    oracle_accuracy_simulated,
    oracle_next_distribution,
    read_dataset,
    split_dataset,
    split_sizes,
    synthesize_video,
    walk_activity,
    write_dataset,
)


def two_action_chain(**kw):
    return make_grammar([[0, 1]], [chain_transitions(2)], 2, durations=[[3, 3], [3, 3]], **kw)


# -- grammar -------------------------------------------------------------------
def test_default_grammar_invariants():
    cfg = GrammarConfig()
    g = generate_grammar(cfg, seed=0)
    assert len(g.activity_names) == 4 and g.n_actions == 12
    assert all(len(a) == 8 for a in g.activity_actions)
    for P in g.transitions:
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
    assert (g.durations[:, 0] == 2).all() and (g.durations[:, 1] == 6).all()
    for grp, c in zip(("rgb", "joints", "limbs", "flow"), cfg.channel_groups):
        assert g.prototypes[grp].shape == (12, c, 16, 16)


def test_grammar_may_contain_cycles():
    g = generate_grammar(GrammarConfig(), seed=0)
    # some transition goes backwards in the local order
    assert any(np.triu(P[:-1, :-1].T, k=1).any() for P in g.transitions)


def test_two_action_chain_matrix():
    g = two_action_chain()
    assert g.transitions[0].tolist() == [[0, 1, 0], [0, 0, 1], [0, 0, 1]]


def test_same_seed_same_grammar():
    a, b = generate_grammar(GrammarConfig(), seed=9), generate_grammar(GrammarConfig(), seed=9)
    assert a == b
    assert a != generate_grammar(GrammarConfig(), seed=10)


def test_invalid_rows_rejected():
    P = chain_transitions(2)
    P[0] = 0.0
    with pytest.raises(GrammarError):
        make_grammar([[0, 1]], [P], 2)


def test_unreachable_end_rejected():
    P = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1.0]])
    with pytest.raises(GrammarError, match="END"):
        make_grammar([[0, 1]], [P], 2)


@given(st.integers(0, 200))
def test_random_grammars_valid(seed):
    cfg = GrammarConfig(n_activities=3, actions_per_activity=4, vocab_size=6, n_videos=2)
    g = generate_grammar(cfg, seed)
    g.validate()
    for j in range(3):
        assert g.expected_length(j) <= cfg.max_expected_length_s


# -- videos ----------------------------------------------------------------------
def test_chain_video_forced():
    v = synthesize_video(two_action_chain(), 0, seed=0)
    assert v.segments == [(0, 0.0, 3.0), (1, 3.0, 6.0)]
    assert v.n_frames == 24


def test_noiseless_frames_equal_prototypes():
    g = two_action_chain(noise_sigma=0.0, context_strength=0.0)
    v = synthesize_video(g, 0, seed=0)
    for label, s, e in v.segments:
        frames = v.features["rgb"][int(s) * 4 : int(e) * 4]
        np.testing.assert_allclose(frames, np.broadcast_to(g.prototypes["rgb"][label], frames.shape), atol=1e-6)
        assert not v.features["flow"][int(s) * 4 + 1 : int(e) * 4].any()


def test_noiseless_nearest_prototype_is_perfect(chain_grammar, chain_videos):
    g = chain_grammar
    for v in chain_videos:
        labels = np.repeat([a for a, s, e in v.segments], [int(e - s) * 4 for a, s, e in v.segments])
        frames = v.features["joints"].reshape(v.n_frames, -1)
        protos = g.prototypes["joints"].reshape(g.n_actions, -1)
        pred = ((frames[:, None] - protos[None]) ** 2).sum(-1).argmin(1)
        assert (pred == labels).all()


@given(st.integers(0, 10_000))
def test_segments_tile_video(seed):
    g = generate_grammar(GrammarConfig(n_videos=1), seed=seed % 7)
    v = synthesize_video(g, seed % 4, seed)
    assert v.segments[0][1] == 0.0
    for (_, _, e), (_, s, _) in zip(v.segments, v.segments[1:]):
        assert e == s
    assert v.n_frames == 4 * v.duration
    v.validate()


def test_walk_cap_raises():
    P = np.array([[0, 0.999, 0.001], [1, 0, 0], [0, 0, 1.0]])
    g = make_grammar([[0, 1]], [P], 2, max_length_s=20)
    with pytest.raises(GenerationError):
        for s in range(50):
            walk_activity(g, 0, np.random.default_rng(s))


def test_empirical_transitions_match():
    g = generate_grammar(GrammarConfig(), seed=0)
    rng = np.random.default_rng(0)
    j = 1
    acts = g.activity_actions[j]
    counts = np.zeros((len(acts), len(acts) + 1))
    for _ in range(10_000):
        segs = walk_activity(g, j, rng)
        for k, (a, _, _) in enumerate(segs):
            nxt = acts.index(segs[k + 1][0]) if k + 1 < len(segs) else len(acts)
            counts[acts.index(a), nxt] += 1
    freq = counts / counts.sum(axis=1, keepdims=True)
    assert np.abs(freq - g.transitions[j][:-1]).max() < 0.02


# -- oracle ------------------------------------------------------------------------
def test_oracle_row_is_transition_row():
    g = generate_grammar(GrammarConfig(), seed=0)
    a = g.activity_actions[2][3]
    d = oracle_next_distribution(g, 2, a)
    assert d.sum() == pytest.approx(1.0)
    assert d.max() == pytest.approx(g.transitions[2][3].max())
    with pytest.raises(KeyError):
        oracle_next_distribution(g, 2, next(x for x in range(12) if x not in g.activity_actions[2]))


def test_chain_oracle_is_one(chain_grammar):
    assert oracle_accuracy_enumerated(chain_grammar) == pytest.approx(1.0)


def test_oracle_point_seven():
    P = np.array([[0, 0.7, 0.3], [0, 0, 1.0], [0, 0, 1.0]])
    g = make_grammar([[0, 1]], [P], 2, durations=[[1, 1], [1, 1]])
    # seconds on action 0: always 1, correct w.p. 0.7; action 1 visited w.p. 0.7 and always correct
    assert oracle_accuracy_enumerated(g) == pytest.approx((0.7 + 0.7) / 1.7)


def test_oracle_enumeration_matches_simulation():
    g = generate_grammar(GrammarConfig(), seed=0)
    enum = oracle_accuracy_enumerated(g)
    sim = oracle_accuracy_simulated(g, 10**6, seed=1)
    assert abs(enum - sim) < 0.005
    assert 1 / (g.n_actions + 1) <= enum <= 1.0


# -- files ---------------------------------------------------------------------
def test_round_trip(tmp_path, chain_grammar, chain_videos):
    path = tmp_path / "d.jsonl"
    write_dataset(chain_videos, DatasetMeta.from_grammar(chain_grammar), path)
    meta, videos = read_dataset(path)
    assert videos == chain_videos
    assert meta.action_names == chain_grammar.action_names


def test_truncated_file_names_record(tmp_path, chain_grammar, chain_videos):
    path = tmp_path / "d.jsonl"
    write_dataset(chain_videos[:3], DatasetMeta.from_grammar(chain_grammar), path)
    text = path.read_text()
    path.write_text(text[: len(text) - 200])
    with pytest.raises(ParseError, match="record 2"):
        read_dataset(path)


def test_missing_record_detected(tmp_path, chain_grammar, chain_videos):
    path = tmp_path / "d.jsonl"
    write_dataset(chain_videos[:3], DatasetMeta.from_grammar(chain_grammar), path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ParseError, match="record 2"):
        read_dataset(path)


def test_hand_written_fixture(tmp_path):
    """Two videos authored by hand: names as labels, plain-list features, 1x1 images."""
    header = {
        "format": "afn-dataset",
        "version": 1,
        "action_names": ["pour", "stir"],
        "activity_names": ["coffee"],
        "channel_groups": {"rgb": 1, "joints": 1, "limbs": 1, "flow": 1},
        "framerate": 1,
        "image_size": [1, 1],
        "num_videos": 2,
    }

    def feats(vals):
        return {
            g: {"dtype": "<f8", "shape": [len(vals), 1, 1, 1], "data": [[[[x]]] for x in vals]}
            for g in ("rgb", "joints", "limbs", "flow")
        }

    recs = [
        {"id": "a", "activity": "coffee", "segments": [["pour", 0, 1], ["stir", 1, 3]], "features": feats([1, 2, 2])},
        {"id": "b", "activity": 0, "segments": [[1, 0, 2]], "features": feats([5, 5])},
    ]
    path = tmp_path / "fixture.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in [header, *recs]) + "\n")
    meta, videos = read_dataset(path)
    assert meta.end_label == 2 and meta.framerate == 1
    assert videos[0].segments == [(0, 0.0, 1.0), (1, 1.0, 3.0)]
    assert videos[0].features["rgb"][:, 0, 0, 0].tolist() == [1.0, 2.0, 2.0]
    assert videos[1].activity == 0 and videos[1].duration == 2.0


def test_unknown_label_is_parse_error(tmp_path, chain_grammar, chain_videos):
    path = tmp_path / "d.jsonl"
    write_dataset(chain_videos[:1], DatasetMeta.from_grammar(chain_grammar), path)
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["segments"][0][0] = "nonsense"
    path.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(ParseError, match="record 0"):
        read_dataset(path)


def test_grammar_save_load(tmp_path):
    g = generate_grammar(GrammarConfig(), seed=3)
    g.save(tmp_path / "g.json")
    assert ActivityGrammar.load(tmp_path / "g.json") == g


# -- splits ----------------------------------------------------------------------
def test_split_ten_videos():
    s = split_dataset([f"v{i}" for i in range(10)], (0.6, 0.3, 0.1), seed=0)
    assert (len(s.train), len(s.test), len(s.validation)) == (6, 3, 1)


def test_split_all_train():
    s = split_dataset([f"v{i}" for i in range(7)], (1, 0, 0), seed=0)
    assert len(s.train) == 7 and not s.test and not s.validation


@given(st.integers(3, 500), st.integers(0, 100))
def test_split_partition(n, seed):
    ids = [f"v{i}" for i in range(n)]
    s = split_dataset(ids, (0.6, 0.3, 0.1), seed)
    parts = [set(s.train), set(s.test), set(s.validation)]
    assert set().union(*parts) == set(ids)
    assert sum(map(len, parts)) == n
    for got, frac in zip(parts, (0.6, 0.3, 0.1)):
        assert abs(len(got) - frac * n) <= 1
    assert s == split_dataset(ids, (0.6, 0.3, 0.1), seed)


def test_split_too_few_videos():
    with pytest.raises(ValueError):
        split_dataset(["a", "b"], (0.6, 0.3, 0.1))


def test_split_sizes_sum():
    assert split_sizes(101, (0.6, 0.3, 0.1)) == [61, 30, 10]


def test_two_back_grammar_structure():
    g = generate_grammar(GrammarConfig(kind="two_back", n_activities=4), seed=0)
    shared = g.action_names.index("shared")
    assert all(acts[1] == shared for acts in g.activity_actions)
    assert g.context_strength == 0.0
    succ = Counter(acts[2] for acts in g.activity_actions)
    assert len(succ) == 4
