"""Experiment configuration: typed sections, strict loading, provenance hash.

A config document (YAML or JSON) has the sections ``sim``, ``datagen``,
``train``, ``adapt``, ``control``, ``track`` and ``paths``. Unknown sections
or keys are rejected. Lists become tuples so that the resolved config maps
one-to-one onto the module dataclasses.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from . import adapt as ad
from . import control as ctl
from . import sim as quadsim
from . import trainer as tr


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    m: float = 1.0
    inertia: tuple = (0.0025, 0.0025, 0.004)
    arm: float = 0.125
    k_tau: float = 0.016
    g: float = 9.81
    dt: float = 0.01
    substeps: int = 10
    payload_mass: float = 0.35
    activation_time: float = 0.0

    def __post_init__(self):
        if self.dt <= 0 or self.substeps < 1:
            raise ValueError("dt > 0 and substeps >= 1 required")

    @property
    def quad(self):
        return quadsim.QuadParams(self.m, tuple(self.inertia), self.arm, self.k_tau, self.g)


@dataclass
class TrackSection:
    references: tuple = ("circle", "lemniscate")
    duration: float = 30.0
    measurement_noise: float = 0.0
    seed: int = 0
    # open-loop evaluation horizon (0.5 s at 100 Hz)
    eval_horizon: int = 50

    def __post_init__(self):
        for r in self.references:
            if r not in ("circle", "lemniscate", "hover"):
                raise ValueError(f"unknown reference {r!r}")
        if self.duration <= 0 or self.eval_horizon < 1:
            raise ValueError("duration and eval_horizon must be positive")


@dataclass
class PathsSection:
    out_dir: str = "runs/paper-repro"


SECTIONS = {
    "sim": SimConfig,
    "datagen": quadsim.DatagenConfig,
    "train": tr.TrainConfig,
    "adapt": ad.AdaptConfig,
    "control": ctl.ControlConfig,
    "track": TrackSection,
    "paths": PathsSection,
}


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    datagen: quadsim.DatagenConfig = field(default_factory=quadsim.DatagenConfig)
    train: tr.TrainConfig = field(default_factory=tr.TrainConfig)
    adapt: ad.AdaptConfig = field(default_factory=ad.AdaptConfig)
    control: ctl.ControlConfig = field(default_factory=ctl.ControlConfig)
    track: TrackSection = field(default_factory=TrackSection)
    paths: PathsSection = field(default_factory=PathsSection)


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def section_fields(name):
    return [f.name for f in dataclasses.fields(SECTIONS[name])]


def to_dict(cfg):
    return {name: {k: _plain(getattr(getattr(cfg, name), k)) for k in section_fields(name)}
            for name in SECTIONS}


def from_dict(doc, base=None):
    """Builds a config from a (partial) nested mapping on top of ``base``."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping of sections")
    merged = to_dict(base if base is not None else ExperimentConfig())
    for name, section in doc.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown config section {name!r}")
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        known = set(section_fields(name))
        for key, value in section.items():
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            merged[name][key] = value
    built = {}
    for name, cls in SECTIONS.items():
        kwargs = {k: _tuplify(v) for k, v in merged[name].items()}
        try:
            built[name] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"section {name!r}: {exc}") from exc
    cfg = ExperimentConfig(**built)
    if cfg.datagen.dt != cfg.sim.dt:
        raise ConfigError(f"datagen.dt={cfg.datagen.dt} differs from sim.dt={cfg.sim.dt}")
    return cfg


def load(path, base=None):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return from_dict(doc, base)


def apply_overrides(cfg, overrides):
    """``overrides``: iterable of ``("section.key", value)``."""
    doc = {}
    for dotted, value in overrides:
        name, _, key = dotted.partition(".")
        doc.setdefault(name, {})[key] = value
    return from_dict(doc, cfg)


def parse_value(text):
    """Flag values use YAML scalars/lists: ``0.35``, ``[1, 2]``, ``true``."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {text!r}: {exc}") from exc


def dumps(cfg):
    return json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    """sha256 of the resolved config; ``paths`` is excluded so relocating outputs keeps it."""
    doc = to_dict(cfg)
    doc.pop("paths")
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


PRESETS = {
    # desk-scale defaults
    "paper-repro": {},
    # dataset and training budget of the original study
    "paper-scale": {
        "datagen": {"n_train": 500, "n_val": 500, "n_samples": 700},
        "train": {"batch_size": 8192, "epochs": 10000},
        "paths": {"out_dir": "runs/paper-scale"},
    },
    # seconds-scale plumbing check
    "smoke": {
        "datagen": {"n_train": 4, "n_val": 2, "n_samples": 120},
        "train": {"epochs": 3, "batch_size": 256},
        "control": {"horizon": 10, "max_iters": 1},
        "adapt": {"horizon": 10, "every": 10, "iters_per_window": 1},
        "track": {"duration": 0.3},
        "paths": {"out_dir": "runs/smoke"},
    },
}


def preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return from_dict(PRESETS[name])
