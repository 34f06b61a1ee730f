"""Run configuration: one JSON document holding every tunable."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CorpusSpec
from .nets import DecoderConfig, DenoiserConfig
from .samplers import SamplerConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSize:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128


@dataclass(frozen=True)
class RecoverySettings:
    d_list: tuple = (8, 16, 32)
    sigma: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    split: tuple = (0.9, 0.1)
    dim: int = 8
    embed_seed: int = 0
    schedule_s: float = 0.008
    denoiser: ModelSize = field(default_factory=ModelSize)
    decoder: ModelSize = field(default_factory=ModelSize)
    diffusion_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        steps=2000, lr=4e-4, schedule="constant", weight_decay=0.02))
    decoder_train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=2000, lr=1e-3))
    linear_train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=2000, lr=1e-2,
                                                                          weight_decay=0.0))
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    temperatures: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    n_samples: int = 64
    oracle_order: int = 2
    oracle_add_k: float = 0.1
    recovery: RecoverySettings = field(default_factory=RecoverySettings)

    def denoiser_config(self) -> DenoiserConfig:
        s = self.denoiser
        return DenoiserConfig(dim=self.dim, max_len=self.corpus.L, d_model=s.d_model,
                              n_layers=s.n_layers, n_heads=s.n_heads, d_ff=s.d_ff)

    def decoder_config(self, vocab_size: int) -> DecoderConfig:
        s = self.decoder
        return DecoderConfig(vocab_size=vocab_size, dim=self.dim, max_len=self.corpus.L,
                             d_model=s.d_model, n_layers=s.n_layers, n_heads=s.n_heads, d_ff=s.d_ff)


def to_dict(obj) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v

    return conv(obj)


def from_dict(cls, data: dict, where: str = "config", base=None):
    """Strict inverse of ``to_dict``.

    Keys absent from ``data`` keep their value in ``base`` (default: ``cls()``),
    so a nested section like ``diffusion_train`` may override a single field
    without resetting the RunConfig-level defaults of its siblings.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    if base is None:
        try:
            base = cls()
        except TypeError:
            base = None
    kwargs = {}
    for name, value in data.items():
        tp = hints.get(name)
        if dataclasses.is_dataclass(tp):
            value = from_dict(tp, value, f"{where}.{name}", getattr(base, name, None))
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return from_dict(RunConfig, data)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return loads(text)
