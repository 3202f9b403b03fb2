"""Six-frames-in-one-second clip sampling and batch assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import GROUP_NAMES
from .datagen import Video

FRAMES_PER_CLIP = 6


class SamplingError(RuntimeError):
    pass


@dataclass
class ClipSample:
    X: np.ndarray  # [frames, C, S, S]
    t: float
    video_id: str
    activity: int
    y_current: int
    y_next: int  # END is encoded as n_actions
    straddle: bool
    horizon_fraction: float
    time_to_next_start: float
    segment_index: int


@dataclass
class Batch:
    samples: list[ClipSample]

    @property
    def activities(self) -> set[int]:
        return {s.activity for s in self.samples}

    @property
    def K(self) -> int:
        return len(self.activities)

    def __len__(self) -> int:
        return len(self.samples)

    def stacked(self) -> np.ndarray:
        return np.stack([s.X for s in self.samples])


def window_segments(video: Video, t: float) -> list[int]:
    """Indices of segments intersecting the half-open window ``[t, t + 1)``."""
    return [k for k, (_, s, e) in enumerate(video.segments) if s < t + 1 and e > t]


def segment_at(video: Video, t: float) -> int:
    for k, (_, s, e) in enumerate(video.segments):
        if s <= t < e:
            return k
    raise SamplingError(f"time {t} lies outside video {video.video_id} of length {video.duration}")


def stack_channels(frames: list[dict[str, np.ndarray]], order=GROUP_NAMES) -> np.ndarray:
    """Concatenate channel groups of each frame along the channel axis: ``[frames, sum C_g, S, S]``."""
    out = []
    for i, fr in enumerate(frames):
        missing = [g for g in order if g not in fr]
        if missing:
            raise SamplingError(f"frame {i} is missing channel groups {missing}")
        out.append(np.concatenate([fr[g] for g in order], axis=0))
    return np.stack(out)


def unstack_channels(X: np.ndarray, sizes: dict[str, int], order=GROUP_NAMES) -> list[dict[str, np.ndarray]]:
    bounds = np.cumsum([0] + [sizes[g] for g in order])
    return [{g: x[bounds[k] : bounds[k + 1]] for k, g in enumerate(order)} for x in X]


def frame_times(t: float, n: int = FRAMES_PER_CLIP, rng: np.random.Generator | None = None, jitter: bool = False):
    offsets = (np.arange(n) + (rng.random(n) if jitter else 0.0)) / n
    return t + offsets


def _labels(video: Video, t: float, end_label: int):
    inside = window_segments(video, t)
    k = segment_at(video, t)
    label, s, e = video.segments[k]
    y_next = video.segments[k + 1][0] if k + 1 < len(video.segments) else end_label
    return dict(
        activity=video.activity,
        y_current=label,
        y_next=y_next,
        straddle=len(inside) >= 2,
        horizon_fraction=(e - t) / (e - s),
        time_to_next_start=e - t,
        segment_index=k,
    )


def sample_clip(
    video: Video,
    rng: np.random.Generator | None = None,
    *,
    t: float | None = None,
    end_label: int,
    n_frames: int = FRAMES_PER_CLIP,
    jitter: bool = False,
    max_retries: int = 32,
) -> ClipSample:
    """Draw a clip. With ``t=None`` (training) the second is uniform over ``0..T-1`` and
    straddling windows are redrawn; with ``t`` given (inference) the window is taken as is."""
    T = video.duration
    if T < 2:
        raise SamplingError(f"video {video.video_id} is {T} s long; need at least 2 s")
    if t is None:
        n_seconds = int(math.floor(T))
        for _ in range(max_retries + 1):
            t_draw = float(rng.integers(n_seconds))
            lab = _labels(video, t_draw, end_label)
            if not lab["straddle"]:
                break
        else:
            raise SamplingError(f"video {video.video_id}: {max_retries} straddling windows rejected in a row")
        t = t_draw
    else:
        if not 0 <= t <= T - 1:
            raise SamplingError(f"t={t} outside [0, {T - 1}] for video {video.video_id}")
        lab = _labels(video, t, end_label)
    times = frame_times(t, n_frames, rng, jitter)
    idx = np.minimum(np.floor(times * video.framerate + 1e-9).astype(int), video.n_frames - 1)
    X = np.concatenate([video.features[g][idx] for g in GROUP_NAMES], axis=1)
    return ClipSample(X=X, t=float(t), video_id=video.video_id, **lab)


def assemble_batch(videos: list[Video], batch_size: int, rng: np.random.Generator, *, end_label: int, **kw) -> Batch:
    """Sample ``batch_size`` videos with replacement and one training clip from each."""
    if not videos:
        raise SamplingError("cannot assemble a batch from an empty split")
    if batch_size < 1:
        raise SamplingError(f"batch size must be >= 1, got {batch_size}")
    picks = rng.integers(len(videos), size=batch_size)
    return Batch([sample_clip(videos[i], rng, end_label=end_label, **kw) for i in picks])
