"""Device technologies, crossbar geometry and experiment configuration."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class TechnologyProfile:
    name: str
    r_on: float
    r_off: float

    def __post_init__(self):
        if not self.r_on > 0:
            raise DomainError(f"r_on must be positive, got {self.r_on}")
        if not self.r_off > self.r_on:
            raise DomainError(f"r_off ({self.r_off}) must exceed r_on ({self.r_on})")

    @property
    def g_on(self) -> float:
        return 1.0 / self.r_on

    @property
    def g_off(self) -> float:
        return 1.0 / self.r_off


TECHNOLOGIES = {
    "TaOx": TechnologyProfile("TaOx", 20e3, 200e3),
    "PCM": TechnologyProfile("PCM", 60e3, 600e3),
    "Ag/Si": TechnologyProfile("Ag/Si", 100e3, 1e6),
}


def get_technology(name: str) -> TechnologyProfile:
    try:
        return TECHNOLOGIES[name]
    except KeyError:
        raise ConfigError(
            f"unknown technology {name!r}; choose from {sorted(TECHNOLOGIES)}"
        ) from None


@dataclass(frozen=True)
class CrossbarGeometry:
    rows: int = 128
    cols: int = 128
    r_line: float = 2.0
    r_access: float = 1e3
    v_max: float = 0.5

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DomainError(f"crossbar must be at least 1x1, got {self.rows}x{self.cols}")
        if self.r_line < 0 or self.r_access < 0:
            raise DomainError("line and access resistances must be non-negative")
        if not self.v_max > 0:
            raise DomainError(f"v_max must be positive, got {self.v_max}")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 16
    n_train: int = 1000
    n_val: int = 300


@dataclass(frozen=True)
class CampaignConfig:
    n_samples: int = 500
    drs_batch_size: int = 8
    noise_seeds: int = 5

    def __post_init__(self):
        if self.n_samples < 1:
            raise DomainError("campaign needs at least one sample")
        if self.drs_batch_size < 1:
            raise DomainError("DRS batch size must be >= 1")
        if self.noise_seeds < 1:
            raise DomainError("need at least one noise seed")


@dataclass(frozen=True)
class ExperimentConfig:
    technology: TechnologyProfile = field(default_factory=lambda: TECHNOLOGIES["TaOx"])
    geometry: CrossbarGeometry = field(default_factory=CrossbarGeometry)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    seed: int = 0

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed)


def weight_to_conductance(w, tech: TechnologyProfile):
    """Linear map of normalized weights in [0, 1] onto [1/r_off, 1/r_on]."""
    w = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
        raise DomainError("normalized weights must lie in [0, 1]")
    g = tech.g_off + w * (tech.g_on - tech.g_off)
    return g if g.ndim else float(g)


def conductance_to_weight(g, tech: TechnologyProfile):
    g = np.asarray(g, dtype=float)
    return (g - tech.g_off) / (tech.g_on - tech.g_off)


def normalize_weights(w):
    """Scale a non-negative matrix into [0, 1]; returns ``(normalized, scale)``."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise DomainError("normalize_weights expects a non-negative matrix")
    scale = float(w.max()) if w.size and w.max() > 0 else 1.0
    return w / scale, scale


# -- config files -----------------------------------------------------------

_SECTIONS = {
    "technology": ("name", "r_on", "r_off"),
    "geometry": tuple(f.name for f in fields(CrossbarGeometry)),
    "training": tuple(f.name for f in fields(TrainingConfig)),
    "campaign": tuple(f.name for f in fields(CampaignConfig)) + ("seed",),
}


def _coerce(cls, section, raw):
    kwargs = {}
    types = {f.name: f.type for f in fields(cls)}
    for key, text in raw.items():
        typ = types[key]
        try:
            kwargs[key] = int(text) if typ in ("int", int) else float(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {text!r} as {typ}") from None
    return kwargs


def load_config(path) -> ExperimentConfig:
    """Read an INI-style config. Missing keys take defaults; unknown keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")

    cfg = ExperimentConfig()
    if parser.has_section("technology"):
        sec = dict(parser["technology"])
        name = sec.get("name", cfg.technology.name)
        if name in TECHNOLOGIES:
            base = TECHNOLOGIES[name]
        elif not {"r_on", "r_off"} <= set(sec):
            raise ConfigError(f"[technology] custom technology {name!r} needs r_on and r_off")
        else:
            base = None
        try:
            tech = TechnologyProfile(
                name,
                float(sec.get("r_on", base.r_on if base else 0)),
                float(sec.get("r_off", base.r_off if base else 0)),
            )
        except (ValueError, DomainError) as exc:
            raise ConfigError(f"[technology] {exc}") from None
        cfg = replace(cfg, technology=tech)
    for section, attr, cls in (("geometry", "geometry", CrossbarGeometry),
                               ("training", "training", TrainingConfig),
                               ("campaign", "campaign", CampaignConfig)):
        if not parser.has_section(section):
            continue
        raw = dict(parser[section])
        seed = raw.pop("seed", None) if section == "campaign" else None
        try:
            obj = cls(**{**vars(getattr(cfg, attr)), **_coerce(cls, section, raw)})
        except DomainError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
        cfg = replace(cfg, **{attr: obj})
        if seed is not None:
            try:
                cfg = cfg.with_seed(int(seed))
            except ValueError:
                raise ConfigError(f"[campaign] seed: cannot parse {seed!r}") from None
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "technology": vars(cfg.technology).copy(),
        "geometry": vars(cfg.geometry).copy(),
        "training": vars(cfg.training).copy(),
        "campaign": {**vars(cfg.campaign), "seed": cfg.seed},
    }


def save_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in config_to_dict(cfg).items():
        parser[section] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in values.items()}
    with open(Path(path), "w") as fh:
        parser.write(fh)
