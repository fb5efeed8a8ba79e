"""INI-style run configuration shared by profiles, models, splits and baselines.

Sections::

    [generate]            per_class, distance_min, distance_max, n_samples,
                          sample_interval, pulse_width, seed, name
    [profile <name>]      label, path_count_mean, decay_rate, nlos_bias_min,
                          nlos_bias_max, noise_sigma, first_path_attenuation
    [variant]             keep, merge, class_names
    [model]               any ModelConfig field
    [split]               train_fraction, seed, stratified
    [baseline]            learning_rate, epochs, l2, loss

Unknown sections and keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .baseline import LinearConfig
from .dataset import SplitSpec
from .model import ModelConfig
from .signal_sim import DEFAULT_N_SAMPLES, DEFAULT_SAMPLE_INTERVAL, EnvironmentProfile


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GenerateConfig:
    per_class: int = 100
    distance_min: float = 2.0
    distance_max: float = 10.0
    n_samples: int = DEFAULT_N_SAMPLES
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL
    pulse_width: int = 5
    seed: int = 0
    name: str = "synthetic"


@dataclass(frozen=True)
class VariantConfig:
    """Optional label filtering/merging applied after loading a dataset.

    ``keep`` lists class names to retain; ``merge`` maps class names to new
    group names as ``old:new`` pairs.
    """

    keep: tuple[str, ...] = ()
    merge: tuple[str, ...] = ()


def default_profiles() -> list[EnvironmentProfile]:
    return [
        EnvironmentProfile(0, 3.0, 5e7, (0.0, 0.1), 0.01, 1.0, "los"),
        EnvironmentProfile(1, 8.0, 2e7, (0.9, 1.0), 0.02, 0.3, "nlos"),
    ]


@dataclass
class RunConfig:
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    profiles: list[EnvironmentProfile] = field(default_factory=default_profiles)
    variant: VariantConfig = field(default_factory=VariantConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    baseline: LinearConfig = field(default_factory=LinearConfig)


_PROFILE_KEYS = ("label", "path_count_mean", "decay_rate", "nlos_bias_min", "nlos_bias_max", "noise_sigma",
                 "first_path_attenuation")
_SPLIT_KEYS = {"train_fraction": "train_fraction", "seed": "rng_seed", "stratified": "stratified"}


def _convert(raw: str, default, where: str):
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(t) for t in items)
            return tuple(items)
        if default is None:
            if text.lower() in ("", "none"):
                return None
            return tuple(int(t) for t in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _fill(cls, section: configparser.SectionProxy, where: str, rename: dict | None = None):
    rename = rename or {f.name: f.name for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, raw in section.items():
        if key not in rename:
            raise ConfigError(f"[{where}] unknown key {key!r}; allowed: {sorted(rename)}")
        attr = rename[key]
        kwargs[attr] = _convert(raw, getattr(defaults, attr), f"[{where}] {key}")
    try:
        return dataclasses.replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def _parse_profile(name: str, section: configparser.SectionProxy) -> EnvironmentProfile:
    unknown = set(section) - set(_PROFILE_KEYS)
    if unknown:
        raise ConfigError(f"[profile {name}] unknown keys {sorted(unknown)}")
    missing = set(_PROFILE_KEYS) - set(section)
    if missing:
        raise ConfigError(f"[profile {name}] missing keys {sorted(missing)}")
    try:
        return EnvironmentProfile(
            label=int(section["label"]),
            path_count_mean=float(section["path_count_mean"]),
            decay_rate=float(section["decay_rate"]),
            nlos_bias_range=(float(section["nlos_bias_min"]), float(section["nlos_bias_max"])),
            noise_sigma=float(section["noise_sigma"]),
            first_path_attenuation=float(section["first_path_attenuation"]),
            name=name,
        )
    except ValueError as exc:
        raise ConfigError(f"[profile {name}] {exc}") from exc


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = RunConfig()
    profiles = []
    for sec in parser.sections():
        body = parser[sec]
        if sec.startswith("profile "):
            profiles.append(_parse_profile(sec[len("profile "):].strip(), body))
        elif sec == "generate":
            cfg.generate = _fill(GenerateConfig, body, sec)
        elif sec == "variant":
            cfg.variant = _fill(VariantConfig, body, sec)
        elif sec == "model":
            cfg.model = _fill(ModelConfig, body, sec)
        elif sec == "split":
            cfg.split = _fill(SplitSpec, body, sec, _SPLIT_KEYS)
        elif sec == "baseline":
            cfg.baseline = _fill(LinearConfig, body, sec)
        else:
            raise ConfigError(f"{source}: unknown section [{sec}]")
    if profiles:
        cfg.profiles = profiles
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def render_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["generate"] = {f.name: _render(getattr(cfg.generate, f.name)) for f in dataclasses.fields(cfg.generate)}
    for p in cfg.profiles:
        parser[f"profile {p.display_name}"] = {
            "label": str(p.label),
            "path_count_mean": repr(float(p.path_count_mean)),
            "decay_rate": repr(float(p.decay_rate)),
            "nlos_bias_min": repr(float(p.nlos_bias_range[0])),
            "nlos_bias_max": repr(float(p.nlos_bias_range[1])),
            "noise_sigma": repr(float(p.noise_sigma)),
            "first_path_attenuation": repr(float(p.first_path_attenuation)),
        }
    parser["variant"] = {f.name: _render(getattr(cfg.variant, f.name)) for f in dataclasses.fields(cfg.variant)}
    parser["model"] = {f.name: _render(getattr(cfg.model, f.name)) for f in dataclasses.fields(cfg.model)}
    parser["split"] = {key: _render(getattr(cfg.split, attr)) for key, attr in _SPLIT_KEYS.items()}
    parser["baseline"] = {f.name: _render(getattr(cfg.baseline, f.name)) for f in dataclasses.fields(cfg.baseline)}
    lines = []
    for sec in parser.sections():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in parser[sec].items())
        lines.append("")
    return "\n".join(lines)


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(render_config(cfg), encoding="utf-8")


def load_profiles(path) -> list[EnvironmentProfile]:
    """Read only the ``[profile ...]`` blocks of a config file."""
    return load_config(path).profiles
