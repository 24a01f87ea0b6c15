"""Run configuration: dataclasses, named presets and the key=value file format.

A config file holds one ``section.field = value`` pair per line; ``#`` starts
a comment. Sections: ``train``, ``net``, ``loss``, ``augment``, ``geometry``,
``features``. Tuples are comma separated. A ``preset = name`` line selects a
named starting point that later lines override.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ConfigError
from ..geometry import GridGeometry

NETWORKS = ("3d", "2d")


@dataclass(frozen=True)
class TrainSettings:
    network: str = "3d"
    optimizer: str = "adam"
    lr: float = 0.0025
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0005
    decay: float = 0.9
    decay_every: int = 10
    epochs: int = 300
    seed: int = 0
    accumulate: int = 1
    log_every: int = 1
    eval_every: int = 0

    def __post_init__(self):
        if self.network not in NETWORKS:
            raise ConfigError(f"network must be one of {NETWORKS}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be sgd or adam")
        if self.lr < 0:
            raise ConfigError("learning rate must be nonnegative")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError("decay must lie in (0, 1]")
        if self.epochs < 0 or self.accumulate < 1 or self.decay_every < 1:
            raise ConfigError("epochs, accumulate and decay_every out of range")


@dataclass(frozen=True)
class NetSettings:
    channels: tuple = (16, 32, 64, 128, 128)
    aspp_rates: tuple = (2, 3, 4)
    cam_kernel: int = 7
    reduction: int = 4
    spn_iterations: int = 3
    spn_hidden: int = 16


@dataclass(frozen=True)
class LossSettings:
    lam: float = 0.35
    alpha: float = 0.5
    beta: float = 0.5
    omega: float = 1.0
    gamma: float = 2.0
    class_weights: bool = True


@dataclass(frozen=True)
class AugmentSettings:
    enabled: bool = False
    crop_fraction: float = 0.0
    dropout_prob: float = 0.0
    translation_range: float = 0.1
    rotation_deg_3d: float = 10.0
    rotation_deg_2d: float = 45.0


@dataclass(frozen=True)
class GeometrySettings:
    origin: tuple = (0.0, -25.6, -2.0)
    voxel_size: tuple = (0.2, 0.2, 0.2)
    dims: tuple = (256, 256, 32)

    def grid(self) -> GridGeometry:
        return GridGeometry(tuple(self.origin), tuple(self.voxel_size), tuple(int(v) for v in self.dims))


@dataclass(frozen=True)
class FeatureSettings:
    tau: float = 0.6
    use_intensity: bool = True
    height: int = 64
    width: int = 1024
    fov_up: float = 3.0
    fov_down: float = -25.0


@dataclass(frozen=True)
class RunConfig:
    train: TrainSettings = field(default_factory=TrainSettings)
    net: NetSettings = field(default_factory=NetSettings)
    loss: LossSettings = field(default_factory=LossSettings)
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    geometry: GeometrySettings = field(default_factory=GeometrySettings)
    features: FeatureSettings = field(default_factory=FeatureSettings)

    def with_values(self, **sections) -> "RunConfig":
        out = self
        for name, values in sections.items():
            out = replace(out, **{name: replace(getattr(out, name), **values)})
        return out


_DESK_GEOMETRY = {"origin": (0.0, -6.4, -2.0), "dims": (64, 64, 16)}
_DESK_NET = {"channels": (16, 16, 32, 32, 32), "spn_hidden": 8}

PRESETS = {
    "paper-body-3d": {"train": dict(network="3d", optimizer="adam", lr=0.0025, weight_decay=0.0005,
                                    decay=0.9, decay_every=10)},
    "paper-appendix-3d": {"train": dict(network="3d", optimizer="sgd", lr=0.025, momentum=0.9,
                                        weight_decay=0.0001, decay=0.9, decay_every=10)},
    "paper-body-2d": {"train": dict(network="2d", optimizer="sgd", lr=0.001, momentum=0.9,
                                    weight_decay=0.0005, decay=0.9, decay_every=10)},
    "paper-appendix-2d": {"train": dict(network="2d", optimizer="sgd", lr=0.001, momentum=0.9,
                                        weight_decay=0.0005, decay=0.99, decay_every=10)},
    "desk-3d": {"train": dict(network="3d", optimizer="adam", lr=0.01, weight_decay=0.0,
                              decay=0.9, decay_every=10, epochs=300),
                "net": _DESK_NET, "geometry": _DESK_GEOMETRY},
    "desk-2d": {"train": dict(network="2d", optimizer="adam", lr=0.01, weight_decay=0.0,
                              decay=0.9, decay_every=10, epochs=300),
                "net": _DESK_NET, "geometry": _DESK_GEOMETRY},
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig().with_values(**PRESETS[name])


def _coerce(text: str, typ, current):
    text = text.strip()
    origin = typing.get_origin(typ)
    if typ is bool or isinstance(current, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if typ is tuple or origin is tuple or isinstance(current, tuple):
        items = [t for t in text.replace(" ", "").split(",") if t]
        kind = type(current[0]) if current else float
        return tuple(kind(float(t)) if kind is int else kind(t) for t in items)
    if typ is int or isinstance(current, int):
        v = float(text)
        if v != int(v):
            raise ConfigError(f"not an integer: {text!r}")
        return int(v)
    if typ is float or isinstance(current, float):
        return float(text)
    return text


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            cfg = preset(value)
            continue
        pairs.append((lineno, key, value))
    for lineno, key, value in pairs:
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a section prefix")
        section, name = key.split(".", 1)
        if section not in {f.name for f in dataclasses.fields(RunConfig)}:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        block = getattr(cfg, section)
        fields = {f.name: f for f in dataclasses.fields(block)}
        if name not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        hints = typing.get_type_hints(type(block))
        try:
            val = _coerce(value, hints.get(name), getattr(block, name))
            cfg = replace(cfg, **{section: replace(block, **{name: val})})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    return cfg


def load_config(path=None, preset_name: str | None = None) -> RunConfig:
    base = preset(preset_name) if preset_name else RunConfig()
    if path is None:
        return base
    return parse_config(Path(path).read_text(), base)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for sec in dataclasses.fields(RunConfig):
        block = getattr(cfg, sec.name)
        for f in dataclasses.fields(block):
            v = getattr(block, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{sec.name}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
