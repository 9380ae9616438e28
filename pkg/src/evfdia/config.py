"""Scenario configuration: nested dataclasses, YAML loading, validation and a
fully-resolved dict form that loads back to an identical scenario."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .attack import EtaStrategy
from .estimation import NoiseConfig
from .evcs import Dist, StationConfig
from .regulation import RegulationConfig

DATA_DIR = Path(__file__).resolve().parent / "data"

# Residential-style daily shape, hourly multipliers of the nominal feeder load.
DEFAULT_HOURLY = (0.50, 0.46, 0.44, 0.43, 0.44, 0.50, 0.60, 0.70, 0.74, 0.72, 0.70, 0.70,
                  0.70, 0.68, 0.68, 0.70, 0.76, 0.86, 0.96, 1.00, 0.97, 0.88, 0.74, 0.60)


class ConfigError(ValueError):
    """Invalid scenario configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key
        self.msg = msg

    def __reduce__(self):
        return ConfigError, (self.key, self.msg)


@dataclass(frozen=True)
class LoadConfig:
    hourly: tuple = DEFAULT_HOURLY
    scale: float = 1.0
    noise: float = 0.03  # relative per-bus, per-slot deviation from the profile

    def __post_init__(self):
        object.__setattr__(self, "hourly", tuple(float(h) for h in self.hourly))
        if len(self.hourly) != 24 or min(self.hourly) < 0:
            raise ConfigError("load.hourly", "need 24 non-negative multipliers")
        if self.scale <= 0:
            raise ConfigError("load.scale", "must be positive")
        if not 0 <= self.noise < 1:
            raise ConfigError("load.noise", "must lie in [0, 1)")

    def factor(self, hour):
        """Piecewise-linear interpolation of the hourly multipliers (periodic)."""
        h = np.asarray(hour, dtype=float) % 24.0
        xs = np.arange(25)
        ys = np.append(self.hourly, self.hourly[0])
        return self.scale * np.interp(h, xs, ys)


@dataclass(frozen=True)
class ChannelConfig:
    ber: float | None = 0.01
    payload_bits: int = 32
    k_gb: float | None = None  # explicit chain overrides the ber mapping
    k_bg: float | None = None

    def __post_init__(self):
        if (self.k_gb is None) != (self.k_bg is None):
            raise ConfigError("channel.k_gb", "give both k_gb and k_bg or neither")
        if self.k_gb is None:
            if self.ber is None or not 0 <= self.ber <= 1:
                raise ConfigError("channel.ber", "must lie in [0, 1]")
        else:
            for k in ("k_gb", "k_bg"):
                if not 0 <= getattr(self, k) <= 1:
                    raise ConfigError(f"channel.{k}", "must lie in [0, 1]")
            if self.k_gb + self.k_bg <= 0:
                raise ConfigError("channel.k_gb", "k_gb + k_bg must be positive")
        if self.payload_bits < 1:
            raise ConfigError("channel.payload_bits", "must be positive")

    def transition(self):
        from .channel import ber_to_params
        if self.k_gb is not None:
            return self.k_gb, self.k_bg
        return ber_to_params(self.ber, self.payload_bits)


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "none"  # none | ic | sc
    alpha_max: float = 10.0  # PMU entries bounded by alpha_max * sensor sigma
    eta_mode: str = "all_pass"
    phi_budget: int = 64
    mc_samples: int = 20000
    n_candidates: int = 8

    def __post_init__(self):
        if self.mode not in ("none", "ic", "sc"):
            raise ConfigError("attack.mode", "must be none, ic or sc")
        if self.alpha_max <= 0:
            raise ConfigError("attack.alpha_max", "must be positive")
        try:
            self.strategy(0)
        except ValueError as e:
            raise ConfigError("attack.eta_mode", str(e)) from None

    def strategy(self, seed: int) -> EtaStrategy:
        return EtaStrategy(mode=self.eta_mode, phi_budget=self.phi_budget, mc_samples=self.mc_samples,
                           n_candidates=self.n_candidates, seed=seed)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    feeder: str = "ieee33"
    horizon_slots: int = 144
    slot_minutes: float = 10.0
    warmup_slots: int = 144
    seed: int = 0
    load: LoadConfig = field(default_factory=LoadConfig)
    stations: tuple = ()  # one StationConfig per EVCS bus; empty = defaults
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    regulation: RegulationConfig = field(default_factory=RegulationConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)

    def __post_init__(self):
        if self.horizon_slots < 1:
            raise ConfigError("horizon_slots", "must be >= 1")
        if self.slot_minutes <= 0:
            raise ConfigError("slot_minutes", "must be positive")
        if self.warmup_slots < 0:
            raise ConfigError("warmup_slots", "must be >= 0")
        object.__setattr__(self, "stations", tuple(self.stations))

    @property
    def dt_hours(self) -> float:
        return self.slot_minutes / 60.0

    def feeder_path(self) -> Path:
        p = Path(self.feeder)
        if p.suffix == "" and not p.exists():
            p = DATA_DIR / f"{self.feeder}.feeder"
        return p

    def station_configs(self, n_evcs: int):
        if not self.stations:
            return [StationConfig()] * n_evcs
        if len(self.stations) == 1:
            return list(self.stations) * n_evcs
        if len(self.stations) != n_evcs:
            raise ConfigError("stations", f"need 1 or {n_evcs} station entries, got {len(self.stations)}")
        return list(self.stations)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


# --- dict <-> dataclass ---------------------------------------------------------

def _station_from(d: dict, key: str) -> StationConfig:
    d = dict(d)
    for name in ("soc", "parking"):
        if name in d and isinstance(d[name], dict):
            try:
                d[name] = Dist(d[name]["kind"], tuple(float(v) for v in d[name]["params"]))
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"{key}.{name}", str(e)) from None
    for name in ("power_levels", "power_probs", "battery_levels", "battery_probs"):
        if name in d:
            d[name] = tuple(float(v) for v in d[name])
    if "power_levels" in d and "power_probs" not in d:
        d["power_probs"] = tuple([1.0 / len(d["power_levels"])] * len(d["power_levels"]))
    if "battery_levels" in d and "battery_probs" not in d:
        d["battery_probs"] = tuple([1.0 / len(d["battery_levels"])] * len(d["battery_levels"]))
    return _build(StationConfig, d, key)


def _build(cls, d, key):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(key, "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{key}.{sorted(unknown)[0]}" if key else sorted(unknown)[0], "unknown key")
    try:
        return cls(**d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        msg = str(e)
        bad = next((n for n in sorted(names, key=len, reverse=True) if n in msg), None)
        raise ConfigError(f"{key}.{bad}" if bad else key, msg) from None


def from_dict(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "expected a mapping")
    d = dict(d)
    sub = {
        "load": (LoadConfig, "load"),
        "channel": (ChannelConfig, "channel"),
        "noise": (NoiseConfig, "noise"),
        "regulation": (RegulationConfig, "regulation"),
        "attack": (AttackConfig, "attack"),
    }
    for k, (cls, key) in sub.items():
        if k in d:
            d[k] = _build(cls, d[k], key)
    if "station" in d:  # entries applied to every station
        common = d.pop("station") or {}
        if not isinstance(common, dict):
            raise ConfigError("station", "expected a mapping")
        listed = d.get("stations") or [{}]
        if not isinstance(listed, (list, tuple)):
            raise ConfigError("stations", "expected a list")
        d["stations"] = [{**(s or {}), **common} for s in listed]
    if "stations" in d:
        d["stations"] = tuple(_station_from(s, f"stations[{i}]") for i, s in enumerate(d["stations"] or []))
    return _build(ScenarioConfig, d, "")


def _plain(v):
    if isinstance(v, Dist):
        return v.to_dict()
    if dataclasses.is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError("config", f"parse error: {e}") from None
    cfg = from_dict(data or {})
    fp = Path(cfg.feeder)
    if not fp.is_absolute() and fp.suffix and not fp.exists():
        # resolve relative feeder paths against the config file location
        cand = path.parent / fp
        if cand.exists():
            cfg = cfg.replace(feeder=str(cand))
    return cfg


def dump_resolved(cfg: ScenarioConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def set_path(d: dict, dotted: str, value):
    """Set ``a.b.c`` in a nested dict (creating levels as needed)."""
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        if not isinstance(cur.get(k), dict):
            cur[k] = {}
        cur = cur[k]
    cur[keys[-1]] = value
