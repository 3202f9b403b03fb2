"""Synthetic activity grammars, labeled videos, Bayes oracle, dataset files.

An activity is an absorbing Markov chain over its actions with an explicit
END state. Each action owns an emission prototype per channel group; each
activity owns a context pattern added to the RGB-like group, so the
activity is identifiable from a single clip when ``context_strength > 0``.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import GROUP_NAMES, GrammarConfig

END = "END"
FORMAT_NAME = "afn-dataset"
FORMAT_VERSION = 1


class GrammarError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class ParseError(ValueError):
    pass


@dataclass
class ActivityGrammar:
    action_names: list[str]
    activity_names: list[str]
    activity_actions: list[list[int]]  # global action ids per activity, local order
    transitions: list[np.ndarray]  # [m+1, m+1], last index is END (absorbing)
    start: list[np.ndarray]  # [m]
    durations: np.ndarray  # [V, 2] integer (d_min, d_max) per global action
    prototypes: dict[str, np.ndarray]  # group -> [V, C_g, S, S]
    context: np.ndarray  # [N, C_rgb, S, S]
    activity_weights: np.ndarray  # [N]
    framerate: int = 4
    noise_sigma: float = 0.0
    context_strength: float = 1.0
    max_length_s: int = 600

    @property
    def n_actions(self) -> int:
        return len(self.action_names)

    @property
    def end_label(self) -> int:
        return len(self.action_names)

    @property
    def channel_groups(self) -> dict[str, int]:
        return {g: self.prototypes[g].shape[1] for g in GROUP_NAMES}

    @property
    def image_size(self) -> tuple[int, int]:
        return tuple(self.prototypes[GROUP_NAMES[0]].shape[2:])

    def validate(self) -> "ActivityGrammar":
        if len(self.activity_names) < 1:
            raise GrammarError("grammar has no activities")
        for j, (acts, P, s0) in enumerate(zip(self.activity_actions, self.transitions, self.start)):
            m = len(acts)
            if m < 1:
                raise GrammarError(f"activity {j} has no actions")
            if P.shape != (m + 1, m + 1):
                raise GrammarError(f"activity {j}: transition matrix shape {P.shape}, expected {(m + 1, m + 1)}")
            if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
                raise GrammarError(f"activity {j}: transition rows must be non-negative and sum to 1")
            if P[m, m] != 1.0:
                raise GrammarError(f"activity {j}: END must be absorbing")
            if s0.shape != (m,) or (s0 < 0).any() or not math.isclose(s0.sum(), 1.0, abs_tol=1e-9):
                raise GrammarError(f"activity {j}: start distribution invalid")
            if (np.diag(P)[:m] > 0).any():
                raise GrammarError(f"activity {j}: self-transitions are not allowed (segments would merge)")
            if not _end_reachable(P):
                raise GrammarError(f"activity {j}: END is not reachable from every action")
        for g in GROUP_NAMES:
            if g not in self.prototypes or self.prototypes[g].shape[0] != self.n_actions:
                raise GrammarError(f"missing or mis-sized prototypes for group {g!r}")
        if (self.durations[:, 0] < 1).any() or (self.durations[:, 1] < self.durations[:, 0]).any():
            raise GrammarError("duration laws need 1 <= d_min <= d_max")
        return self

    def expected_visits(self, activity: int) -> np.ndarray:
        """Expected number of visits to each local action before absorption."""
        P = self.transitions[activity]
        m = P.shape[0] - 1
        Q = P[:m, :m]
        return np.linalg.solve((np.eye(m) - Q).T, self.start[activity])

    def expected_length(self, activity: int) -> float:
        d = self.durations[self.activity_actions[activity]].mean(axis=1)
        return float(self.expected_visits(activity) @ d)

    def to_dict(self) -> dict:
        return {
            "action_names": self.action_names,
            "activity_names": self.activity_names,
            "activity_actions": self.activity_actions,
            "transitions": [P.tolist() for P in self.transitions],
            "start": [s.tolist() for s in self.start],
            "durations": self.durations.tolist(),
            "prototypes": {g: _encode_array(a) for g, a in self.prototypes.items()},
            "context": _encode_array(self.context),
            "activity_weights": self.activity_weights.tolist(),
            "framerate": self.framerate,
            "noise_sigma": self.noise_sigma,
            "context_strength": self.context_strength,
            "max_length_s": self.max_length_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityGrammar":
        return cls(
            action_names=list(d["action_names"]),
            activity_names=list(d["activity_names"]),
            activity_actions=[list(map(int, a)) for a in d["activity_actions"]],
            transitions=[np.array(P, dtype=np.float64) for P in d["transitions"]],
            start=[np.array(s, dtype=np.float64) for s in d["start"]],
            durations=np.array(d["durations"], dtype=np.int64),
            prototypes={g: _decode_array(a) for g, a in d["prototypes"].items()},
            context=_decode_array(d["context"]),
            activity_weights=np.array(d["activity_weights"], dtype=np.float64),
            framerate=int(d["framerate"]),
            noise_sigma=float(d["noise_sigma"]),
            context_strength=float(d["context_strength"]),
            max_length_s=int(d["max_length_s"]),
        ).validate()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ActivityGrammar":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ActivityGrammar):
            return NotImplemented
        return json.dumps(self.to_dict()) == json.dumps(other.to_dict())


def _end_reachable(P: np.ndarray) -> bool:
    m = P.shape[0] - 1
    reach = np.zeros(m + 1, dtype=bool)
    reach[m] = True
    changed = True
    while changed:
        new = reach | ((P > 0) & reach[None, :]).any(axis=1)
        changed = bool((new != reach).any())
        reach = new
    return bool(reach.all())


# -- grammar generation ------------------------------------------------------
def make_grammar(
    activity_actions: list[list[int]],
    transitions: list,
    n_actions: int,
    *,
    start=None,
    durations=None,
    channel_groups=(3, 1, 1, 2),
    image_size: int = 16,
    framerate: int = 4,
    noise_sigma: float = 0.0,
    context_strength: float = 1.0,
    seed: int = 0,
    action_names=None,
    activity_names=None,
    max_length_s: int = 600,
) -> ActivityGrammar:
    """Assemble a grammar from explicit structure; prototypes are drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    n_act = len(activity_actions)
    protos = {
        g: rng.standard_normal((n_actions, c, image_size, image_size)) for g, c in zip(GROUP_NAMES, channel_groups)
    }
    context = rng.standard_normal((n_act, channel_groups[0], image_size, image_size))
    if start is None:
        start = [np.eye(len(a))[0] for a in activity_actions]
    if durations is None:
        durations = np.tile([2, 6], (n_actions, 1))
    return ActivityGrammar(
        action_names=list(action_names or [f"a{i:02d}" for i in range(n_actions)]),
        activity_names=list(activity_names or [f"A{j}" for j in range(n_act)]),
        activity_actions=[list(map(int, a)) for a in activity_actions],
        transitions=[np.asarray(P, dtype=np.float64) for P in transitions],
        start=[np.asarray(s, dtype=np.float64) for s in start],
        durations=np.asarray(durations, dtype=np.int64),
        prototypes=protos,
        context=context,
        activity_weights=np.full(n_act, 1.0 / n_act),
        framerate=framerate,
        noise_sigma=noise_sigma,
        context_strength=context_strength,
        max_length_s=max_length_s,
    ).validate()


def chain_transitions(m: int) -> np.ndarray:
    P = np.zeros((m + 1, m + 1))
    for i in range(m):
        P[i, i + 1] = 1.0
    P[m, m] = 1.0
    return P


def generate_grammar(config: GrammarConfig, seed: int = 0) -> ActivityGrammar:
    """Build a grammar per ``config.kind``; deterministic for a fixed seed."""
    if config.n_activities < 1 or config.actions_per_activity < 1 or config.d_min < 1:
        raise GrammarError("grammar config needs n_activities >= 1, actions_per_activity >= 1, d_min >= 1")
    rng = np.random.default_rng(seed)
    common = dict(
        channel_groups=tuple(config.channel_groups),
        image_size=config.image_size,
        framerate=config.framerate,
        noise_sigma=config.noise_sigma,
        context_strength=config.context_strength,
        max_length_s=config.max_length_s,
        seed=int(rng.integers(2**31)),
    )
    n, m, V = config.n_activities, config.actions_per_activity, config.vocab_size
    if config.kind == "two_back":
        return _two_back_grammar(config, common)
    if m > V:
        raise GrammarError(f"actions_per_activity ({m}) exceeds vocab_size ({V})")
    if config.kind == "chain":
        if n * m <= V:
            perm = rng.permutation(V)
            acts = [sorted(perm[j * m : (j + 1) * m].tolist()) for j in range(n)]
        else:
            acts = [sorted(rng.choice(V, size=m, replace=False).tolist()) for _ in range(n)]
        acts = [rng.permutation(a).tolist() for a in acts]
        durations = np.tile([config.d_min, config.d_max], (V, 1))
        return make_grammar(acts, [chain_transitions(m) for _ in range(n)], V, durations=durations, **common)
    if config.kind != "random":
        raise GrammarError(f"unknown grammar kind {config.kind!r}")
    if m < 2:
        raise GrammarError("random grammars need at least 2 actions per activity")
    durations = np.tile([config.d_min, config.d_max], (V, 1))
    acts, trans = [], []
    for j in range(n):
        for _attempt in range(100):
            a = rng.choice(V, size=m, replace=False).tolist()
            P = _random_rows(rng, m, config)
            if _end_reachable(P):
                visits = np.linalg.solve((np.eye(m) - P[:m, :m]).T, np.eye(m)[0])
                if visits @ durations[a].mean(axis=1) <= config.max_expected_length_s:
                    break
        else:
            raise GrammarError(f"could not draw activity {j} within max_expected_length_s")
        acts.append(a)
        trans.append(P)
    return make_grammar(acts, trans, V, durations=durations, **common)


def _random_rows(rng: np.random.Generator, m: int, config: GrammarConfig) -> np.ndarray:
    P = np.zeros((m + 1, m + 1))
    P[m, m] = 1.0
    for i in range(m):
        primary = i + 1  # index m is END
        candidates = [k for k in range(m + 1) if k not in (i, primary)]
        k_extra = min(config.extra_successors, len(candidates))
        extra = rng.choice(candidates, size=k_extra, replace=False) if k_extra else []
        p_primary = rng.uniform(config.primary_prob_min, config.primary_prob_max) if k_extra else 1.0
        P[i, primary] = p_primary
        if k_extra:
            P[i, extra] = (1.0 - p_primary) * rng.dirichlet(np.ones(k_extra))
    return P


def _two_back_grammar(config: GrammarConfig, common: dict) -> ActivityGrammar:
    """Activities ``p_j -> shared -> q_j -> END``; the shared action's successor depends on ``p_j``.

    Context is forced to zero so a single clip of the shared action cannot
    reveal which activity it belongs to.
    """
    n = max(config.n_activities, 2)
    V = 2 * n + 1
    shared = 2 * n
    acts = [[j, shared, n + j] for j in range(n)]
    durations = np.tile([config.d_min, config.d_max], (V, 1))
    durations[shared] = [2 * config.d_min, 2 * config.d_max]
    names = [f"p{j}" for j in range(n)] + [f"q{j}" for j in range(n)] + ["shared"]
    common = dict(common, context_strength=0.0)
    return make_grammar(acts, [chain_transitions(3) for _ in range(n)], V, durations=durations, action_names=names, **common)


# -- videos -------------------------------------------------------------------
@dataclass
class Video:
    video_id: str
    activity: int
    segments: list[tuple[int, float, float]]  # (action label, start s, end s)
    framerate: int
    features: dict[str, np.ndarray] = field(default_factory=dict)  # group -> [frames, C_g, S, S]

    @property
    def duration(self) -> float:
        return float(self.segments[-1][2])

    @property
    def n_frames(self) -> int:
        return next(iter(self.features.values())).shape[0] if self.features else 0

    def validate(self) -> "Video":
        prev_end = 0.0
        for k, (_, s, e) in enumerate(self.segments):
            if s != prev_end or e <= s:
                raise ValueError(f"video {self.video_id}: segment {k} [{s}, {e}) breaks contiguity")
            prev_end = e
        expected = int(round(self.framerate * self.duration))
        for g, arr in self.features.items():
            if arr.shape[0] != expected:
                raise ValueError(f"video {self.video_id}: group {g} has {arr.shape[0]} frames, expected {expected}")
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, Video):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.activity == other.activity
            and [tuple(s) for s in self.segments] == [tuple(s) for s in other.segments]
            and self.framerate == other.framerate
            and self.features.keys() == other.features.keys()
            and all(
                self.features[g].dtype == other.features[g].dtype and np.array_equal(self.features[g], other.features[g])
                for g in self.features
            )
        )


def walk_activity(grammar: ActivityGrammar, activity: int, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    acts = grammar.activity_actions[activity]
    P = grammar.transitions[activity]
    m = len(acts)
    state = int(rng.choice(m, p=grammar.start[activity]))
    t, segments = 0, []
    while state != m:
        label = acts[state]
        lo, hi = grammar.durations[label]
        d = int(rng.integers(lo, hi + 1))
        segments.append((label, t, t + d))
        t += d
        if t > grammar.max_length_s:
            raise GenerationError(f"activity {activity}: walk exceeded {grammar.max_length_s} s")
        state = int(rng.choice(m + 1, p=P[state]))
    return segments


def synthesize_video(
    grammar: ActivityGrammar, activity: int, seed: int, video_id: str | None = None, dtype=np.float32
) -> Video:
    if not 0 <= activity < len(grammar.activity_names):
        raise GrammarError(f"unknown activity {activity}")
    rng = np.random.default_rng(seed)
    segments = walk_activity(grammar, activity, rng)
    fps = grammar.framerate
    T = segments[-1][2]
    labels = np.empty(T * fps, dtype=np.int64)
    for label, s, e in segments:
        labels[s * fps : e * fps] = label
    sigma = grammar.noise_sigma
    features = {}
    for g in GROUP_NAMES:
        base = grammar.prototypes[g][labels]
        if g == GROUP_NAMES[0]:
            base = base + grammar.context_strength * grammar.context[activity]
        if sigma > 0:
            base = base + sigma * rng.standard_normal(base.shape)
        if g == "flow":
            base = np.diff(base, axis=0, prepend=base[:1])
        features[g] = base.astype(dtype)
    return Video(video_id or f"v{seed}", activity, [(int(a), float(s), float(e)) for a, s, e in segments], fps, features)


def generate_dataset(grammar: ActivityGrammar, n_videos: int, seed: int = 0, dtype=np.float32) -> list[Video]:
    rng = np.random.default_rng(seed)
    activities = rng.choice(len(grammar.activity_names), size=n_videos, p=grammar.activity_weights)
    seeds = rng.integers(2**31, size=n_videos)
    return [
        synthesize_video(grammar, int(a), int(s), video_id=f"vid{i:05d}", dtype=dtype)
        for i, (a, s) in enumerate(zip(activities, seeds))
    ]


# -- oracle ------------------------------------------------------------------
def oracle_next_distribution(grammar: ActivityGrammar, activity: int, action: int) -> np.ndarray:
    """Transition row of ``action`` in ``activity`` over global labels plus END (last)."""
    acts = grammar.activity_actions[activity]
    if action not in acts:
        raise KeyError(f"action {action} does not occur in activity {activity}")
    row = grammar.transitions[activity][acts.index(action)]
    out = np.zeros(grammar.n_actions + 1)
    for local, p in enumerate(row[:-1]):
        out[acts[local]] += p
    out[-1] += row[-1]
    return out


def _argmax_hit(grammar, activity: int) -> np.ndarray:
    """Per local action, the probability that the oracle's argmax next label is correct."""
    acts = grammar.activity_actions[activity]
    return np.array([oracle_next_distribution(grammar, activity, a).max() for a in acts])


def oracle_accuracy_enumerated(grammar: ActivityGrammar) -> float:
    """Expected per-second top-1 next-action accuracy of the Bayes predictor, in closed form.

    Seconds are pooled over videos: activity ``j`` contributes in proportion
    to its sampling weight times its expected length.
    """
    num = den = 0.0
    for j, w in enumerate(grammar.activity_weights):
        visits = grammar.expected_visits(j)
        mean_d = grammar.durations[grammar.activity_actions[j]].mean(axis=1)
        seconds = visits * mean_d
        num += w * float(seconds @ _argmax_hit(grammar, j))
        den += w * float(seconds.sum())
    return num / den


def oracle_accuracy_simulated(grammar: ActivityGrammar, n_seconds: int = 10**6, seed: int = 0) -> float:
    """Monte-Carlo estimate of the same quantity by walking videos until ``n_seconds`` are covered."""
    rng = np.random.default_rng(seed)
    n_act = len(grammar.activity_names)
    best = [
        {a: int(np.argmax(oracle_next_distribution(grammar, j, a))) for a in grammar.activity_actions[j]}
        for j in range(n_act)
    ]
    end = grammar.end_label
    hits = total = 0
    while total < n_seconds:
        j = int(rng.choice(n_act, p=grammar.activity_weights))
        segs = walk_activity(grammar, j, rng)
        for k, (label, s, e) in enumerate(segs):
            nxt = segs[k + 1][0] if k + 1 < len(segs) else end
            d = e - s
            total += d
            if best[j][label] == nxt:
                hits += d
    return hits / total


# -- dataset files -------------------------------------------------------------
@dataclass
class DatasetMeta:
    action_names: list[str]
    activity_names: list[str]
    channel_groups: dict[str, int]
    framerate: int
    image_size: tuple[int, int]

    def to_header(self, num_videos: int) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "action_names": self.action_names,
            "activity_names": self.activity_names,
            "channel_groups": self.channel_groups,
            "framerate": self.framerate,
            "image_size": list(self.image_size),
            "num_videos": num_videos,
        }

    @classmethod
    def from_grammar(cls, grammar: ActivityGrammar) -> "DatasetMeta":
        return cls(
            list(grammar.action_names),
            list(grammar.activity_names),
            grammar.channel_groups,
            grammar.framerate,
            grammar.image_size,
        )

    @property
    def end_label(self) -> int:
        return len(self.action_names)


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    shape = tuple(d["shape"])
    data = d["data"]
    if isinstance(data, str):
        dtype = np.dtype(d.get("dtype", "<f4"))
        arr = np.frombuffer(base64.b64decode(data, validate=True), dtype=dtype)
        return arr.reshape(shape).copy()
    dtype = np.dtype(d.get("dtype", "<f8"))
    return np.asarray(data, dtype=dtype).reshape(shape)


def write_dataset(videos: list[Video], meta: DatasetMeta, path) -> None:
    """One JSON object per line: a header record, then one record per video."""
    with open(path, "w") as fh:
        fh.write(json.dumps(meta.to_header(len(videos))) + "\n")
        for i, v in enumerate(videos):
            rec = {
                "record": "video",
                "index": i,
                "id": v.video_id,
                "activity": v.activity,
                "framerate": v.framerate,
                "segments": [[a, s, e] for a, s, e in v.segments],
                "features": {g: _encode_array(v.features[g]) for g in GROUP_NAMES if g in v.features},
            }
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> tuple[DatasetMeta, list[Video]]:
    """Parse a dataset file. Segment labels may be integer ids or action names."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file (header record missing)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: header record is not valid JSON: {exc}") from exc
    if header.get("format") != FORMAT_NAME:
        raise ParseError(f"{path}: header record has format {header.get('format')!r}, expected {FORMAT_NAME!r}")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported version {header.get('version')!r}")
    try:
        meta = DatasetMeta(
            action_names=list(header["action_names"]),
            activity_names=list(header["activity_names"]),
            channel_groups={g: int(c) for g, c in header["channel_groups"].items()},
            framerate=int(header["framerate"]),
            image_size=tuple(header["image_size"]),
        )
        expected = int(header["num_videos"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: header record missing field: {exc}") from exc
    names = {n: i for i, n in enumerate(meta.action_names)}
    videos = []
    for i, line in enumerate(lines[1:]):
        try:
            rec = json.loads(line)
            segments = []
            for a, s, e in rec["segments"]:
                label = names[a] if isinstance(a, str) else int(a)
                if not 0 <= label < len(meta.action_names):
                    raise ValueError(f"unknown action label {a!r}")
                segments.append((label, float(s), float(e)))
            activity = rec["activity"]
            activity = meta.activity_names.index(activity) if isinstance(activity, str) else int(activity)
            feats = {g: _decode_array(d) for g, d in rec["features"].items()}
            for g, arr in feats.items():
                if g not in meta.channel_groups or arr.shape[1] != meta.channel_groups[g]:
                    raise ValueError(f"feature group {g!r} has shape {arr.shape}, header says {meta.channel_groups.get(g)}")
            v = Video(str(rec["id"]), activity, segments, int(rec.get("framerate", meta.framerate)), feats).validate()
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: record {i} (line {i + 2}) is malformed: {exc}") from exc
        videos.append(v)
    if len(videos) != expected:
        raise ParseError(f"{path}: record {len(videos)} missing; header announces {expected} videos (file truncated?)")
    return meta, videos


# -- splits --------------------------------------------------------------------
@dataclass
class DatasetSplit:
    train: list[str]
    test: list[str]
    validation: list[str]

    def parts(self) -> dict[str, list[str]]:
        return {"train": self.train, "test": self.test, "validation": self.validation}


def split_sizes(n: int, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n`` items."""
    raw = [n * f for f in fractions]
    sizes = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - sizes[k]), k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def split_dataset(videos, fractions=(0.6, 0.3, 0.1), seed: int = 0) -> DatasetSplit:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    ids = [v.video_id if isinstance(v, Video) else str(v) for v in videos]
    parts = sum(1 for f in fractions if f > 0)
    if len(ids) < parts:
        raise ValueError(f"cannot split {len(ids)} videos into {parts} non-empty parts")
    sizes = split_sizes(len(ids), fractions)
    perm = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[k] for k in perm]
    a, b = sizes[0], sizes[0] + sizes[1]
    return DatasetSplit(shuffled[:a], shuffled[a:b], shuffled[b:])
