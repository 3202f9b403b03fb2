"""Run configuration: dataclasses, YAML loading, env overrides, profiles."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SCHEMA_VERSION = 1
ENV_PREFIX = "AFN_"
GROUP_NAMES = ("rgb", "joints", "limbs", "flow")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class GrammarConfig:
    kind: str = "random"  # random | chain | two_back
    n_activities: int = 4
    actions_per_activity: int = 8
    vocab_size: int = 12
    d_min: int = 2
    d_max: int = 6
    extra_successors: int = 2
    primary_prob_min: float = 0.55
    primary_prob_max: float = 0.85
    max_expected_length_s: float = 90.0
    channel_groups: tuple = (3, 1, 1, 2)
    image_size: int = 16
    framerate: int = 4
    noise_sigma: float = 0.5
    context_strength: float = 1.0
    max_length_s: int = 600
    n_videos: int = 120


@dataclass
class ConvLayer:
    out_channels: int
    kernel: tuple = (3, 3, 3)
    stride: tuple = (1, 1, 1)
    padding: tuple = (1, 1, 1)
    pool: tuple = (1, 1, 1)


def desk_conv_plan() -> list[ConvLayer]:
    return [
        ConvLayer(16, stride=(1, 2, 2), pool=(2, 2, 2)),
        ConvLayer(64, pool=(3, 2, 2)),
    ]


def paper_conv_plan() -> list[ConvLayer]:
    # C3D widths; pooling chosen so 6 frames collapse to depth 1 and 112 px to 7.
    return [
        ConvLayer(64, pool=(1, 2, 2)),
        ConvLayer(128, pool=(2, 2, 2)),
        ConvLayer(256, pool=(3, 2, 2)),
        ConvLayer(512, pool=(1, 2, 2)),
        ConvLayer(512),
    ]


@dataclass
class ModelConfig:
    conv: list = field(default_factory=desk_conv_plan)
    reduce_hidden: int = 128
    d_l: int = 64
    hidden: int = 32
    embed_dim: int = 16
    embed_hidden: int = 32
    aux_hidden: tuple = (128, 64)
    dropout: float = 0.6
    use_memory: bool = True
    use_proto: bool = True
    detach_u: bool = False
    dtype: str = "float32"


@dataclass
class SamplerConfig:
    batch_size: int = 25
    frames_per_clip: int = 6
    jitter: bool = False
    max_retries: int = 32


@dataclass
class TrainerConfig:
    steps: int = 2000
    lr: float = 1e-3
    decay: float = 0.9
    decay_interval: int = 3000
    clip: float = 1.0
    gamma: float = 0.1
    smoothing: str = "raw"  # raw | ema
    ema: float = 0.9
    epoch_steps: int = 10000
    reset_memory_per_epoch: bool = False
    refresh_memory_every: int = 0  # 0 disables the in-order memory sweep
    checkpoint_every: int = 500
    log_every: int = 1


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    profile: str = "desk"  # desk | paper-shape
    seed: int = 0
    split: tuple = (0.6, 0.3, 0.1)
    grammar: GrammarConfig = field(default_factory=GrammarConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}")
        if self.profile not in ("desk", "paper-shape"):
            raise ConfigError(f"profile: unknown profile {self.profile!r}")
        if self.profile == "paper-shape":
            m = self.model
            if m.hidden != 256 or m.d_l != 512 or self.grammar.image_size != 112 or sum(self.grammar.channel_groups) != 7:
                raise ConfigError("profile: paper-shape requires model.hidden=256, model.d_l=512, 112x112x7 input")
        g, m, s, t = self.grammar, self.model, self.sampler, self.trainer
        positive = {
            "grammar.n_activities": g.n_activities,
            "grammar.actions_per_activity": g.actions_per_activity,
            "grammar.vocab_size": g.vocab_size,
            "grammar.d_min": g.d_min,
            "grammar.image_size": g.image_size,
            "grammar.framerate": g.framerate,
            "grammar.n_videos": g.n_videos,
            "model.d_l": m.d_l,
            "model.hidden": m.hidden,
            "model.embed_dim": m.embed_dim,
            "model.reduce_hidden": m.reduce_hidden,
            "sampler.batch_size": s.batch_size,
            "sampler.frames_per_clip": s.frames_per_clip,
            "trainer.decay_interval": t.decay_interval,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name}: must be positive, got {value}")
        if g.d_max < g.d_min:
            raise ConfigError(f"grammar.d_max: must be >= d_min ({g.d_min}), got {g.d_max}")
        if g.kind not in ("random", "chain", "two_back"):
            raise ConfigError(f"grammar.kind: unknown kind {g.kind!r}")
        if len(g.channel_groups) != len(GROUP_NAMES) or min(g.channel_groups) <= 0:
            raise ConfigError(f"grammar.channel_groups: need {len(GROUP_NAMES)} positive sizes, got {g.channel_groups}")
        if not 0.0 <= m.dropout < 1.0:
            raise ConfigError(f"model.dropout: must lie in [0, 1), got {m.dropout}")
        if m.dtype not in ("float32", "float64"):
            raise ConfigError(f"model.dtype: expected float32 or float64, got {m.dtype!r}")
        if t.smoothing not in ("raw", "ema"):
            raise ConfigError(f"trainer.smoothing: expected raw or ema, got {t.smoothing!r}")
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ConfigError(f"split: fractions must be non-negative and sum to 1, got {self.split}")
        return self


def paper_shape_config() -> RunConfig:
    cfg = RunConfig(profile="paper-shape")
    cfg.grammar.image_size = 112
    cfg.model = ModelConfig(
        conv=paper_conv_plan(), reduce_hidden=2048, d_l=512, hidden=256, embed_dim=64, embed_hidden=256, aux_hidden=(2048, 512)
    )
    return cfg.validate()


# -- (de)serialization -------------------------------------------------------
def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    if cls is ConvLayer:
        for key in data:
            if key not in known:
                raise ConfigError(f"{path}.{key}: unknown key")
        kwargs = {k: (tuple(v) if isinstance(v, (list, tuple)) else (v,) * 3) if k != "out_channels" else v for k, v in data.items()}
        return ConvLayer(**kwargs)
    kwargs = {}
    for key, value in data.items():
        name = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"{name}: unknown key")
        default = getattr(cls(), key)
        if key == "conv":
            kwargs[key] = [_build(ConvLayer, layer, f"{name}[{i}]") for i, layer in enumerate(value)]
        elif dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, name)
        elif isinstance(default, tuple):
            kwargs[key] = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}: expected a boolean, got {value!r}")
            kwargs[key] = value
        elif isinstance(default, (int, float)) and not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        elif isinstance(default, float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    base = paper_shape_config() if data.get("profile") == "paper-shape" else RunConfig()
    merged = _merge(to_dict(base), data)
    return _build(RunConfig, merged, "").validate()


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_env_overrides(data: dict, environ=None) -> dict:
    """Apply ``AFN_SECTION__KEY=value`` variables (values parsed as YAML scalars)."""
    environ = os.environ if environ is None else environ
    data = dict(data)
    for var, raw in sorted(environ.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        keys = var[len(ENV_PREFIX) :].lower().split("__")
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{'.'.join(keys)}: env override targets a non-section")
        node[keys[-1]] = yaml.safe_load(raw)
    return data


def load_config(path: str | Path | None = None, environ=None, overrides: dict | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"config: top level of {path} must be a mapping")
    data = apply_env_overrides(data, environ)
    if overrides:
        data = _merge(data, overrides)
    return from_dict(data)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
