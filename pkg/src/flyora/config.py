"""Experiment configuration: YAML ingestion, validation, hashing, manifests.

A config file is a nested mapping with sections scenario / phy / channel /
network / ppo / ga plus output_dir. Every field has a default, unknown keys
are rejected, and the fully resolved config hashes stably so reruns can be
matched to their artifacts.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import yaml

from . import __version__
from .baselines import GAConfig
from .channel import ChannelConfig, Position3D
from .network import DEFAULT_CIRCUIT_POWER_MW, DEFAULT_RHO_MAX
from .phy import LoRaPhyConfig
from .ppo import Hyperparams


class ConfigError(ValueError):
    """Bad config file: parse failure, unknown key, or invalid value."""


DEFAULT_AREA_KM2 = 2.0
DEFAULT_GATEWAY_ALTITUDE_M = 300.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Deployment scenario: who is where, and how training episodes run."""

    n_eds: int = 6
    area_m: tuple = None              # (width, height); derived from area_km2
    gateway: Position3D = None        # resolved in __post_init__
    moved_gateway: Position3D = None  # relocation target for retraining
    episodes: int = 2000
    seeds: tuple = (0,)
    reward_mode: str = "per-step"
    service_order: str = "index"
    deterministic_shadowing: bool = False

    def __post_init__(self):
        if self.area_m is None:
            side = math.sqrt(DEFAULT_AREA_KM2 * 1e6)
            object.__setattr__(self, "area_m", (side, side))
        w, h = self.area_m
        if not (w > 0 and h > 0):
            raise ConfigError("scenario.area_m entries must be positive")
        if self.gateway is None:
            object.__setattr__(self, "gateway", Position3D(
                w / 2.0, h / 2.0, DEFAULT_GATEWAY_ALTITUDE_M))
        if self.moved_gateway is None:
            object.__setattr__(self, "moved_gateway", Position3D(
                0.0, 0.0, self.gateway.z))
        if self.n_eds < 1:
            raise ConfigError("scenario.n_eds must be >= 1")
        if self.episodes < 1:
            raise ConfigError("scenario.episodes must be >= 1")
        if len(self.seeds) == 0:
            raise ConfigError("scenario.seeds must be nonempty")
        if self.reward_mode not in ("per-step", "terminal"):
            raise ConfigError("scenario.reward_mode must be per-step or terminal")
        if self.service_order not in ("index", "shuffled"):
            raise ConfigError("scenario.service_order must be index or shuffled")
        if self.gateway.z <= 0:
            raise ConfigError("scenario gateway altitude must be positive")


@dataclass(frozen=True)
class NetworkConfig:
    rho_max: int = DEFAULT_RHO_MAX
    circuit_power_mw: float = DEFAULT_CIRCUIT_POWER_MW

    def __post_init__(self):
        if self.rho_max < 1:
            raise ConfigError("network.rho_max must be >= 1")
        if self.circuit_power_mw <= 0:
            raise ConfigError("network.circuit_power_mw must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    phy: LoRaPhyConfig = field(default_factory=LoRaPhyConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    ppo: Hyperparams = field(default_factory=Hyperparams)
    ga: GAConfig = field(default_factory=GAConfig)
    output_dir: str = "runs"

    def resolved_output_dir(self) -> str:
        """Config value, unless the FLYORA_OUTPUT_DIR env var overrides it."""
        return os.environ.get("FLYORA_OUTPUT_DIR") or self.output_dir

    def to_canonical_dict(self) -> dict:
        s = self.scenario
        return {
            "scenario": {
                "n_eds": s.n_eds,
                "area_m": list(s.area_m),
                "gateway": [s.gateway.x, s.gateway.y, s.gateway.z],
                "moved_gateway": [s.moved_gateway.x, s.moved_gateway.y,
                                  s.moved_gateway.z],
                "episodes": s.episodes,
                "seeds": list(s.seeds),
                "reward_mode": s.reward_mode,
                "service_order": s.service_order,
                "deterministic_shadowing": s.deterministic_shadowing,
            },
            "phy": {
                "bandwidth_hz": self.phy.bandwidth_hz,
                "coding_rate": self.phy.coding_rate,
                "noise_figure_db": self.phy.noise_figure_db,
                "carrier_frequency_hz": self.phy.carrier_frequency_hz,
                "tp_levels_dbm": list(self.phy.tp_levels_dbm),
            },
            "channel": {
                "beta_los": self.channel.beta_los,
                "beta_nlos": self.channel.beta_nlos,
                "sigma_los_db": self.channel.sigma_los_db,
                "sigma_nlos_db": self.channel.sigma_nlos_db,
                "sigmoid_alpha": self.channel.sigmoid_alpha,
                "sigmoid_lambda": self.channel.sigmoid_lambda,
                "reference_distance_m": self.channel.reference_distance_m,
                "carrier_frequency_hz": self.channel.carrier_frequency_hz,
                "noise_power_dbm": self.channel.noise_power_dbm,
            },
            "network": {
                "rho_max": self.network.rho_max,
                "circuit_power_mw": self.network.circuit_power_mw,
            },
            "ppo": self.ppo.to_json(),
            "ga": {
                "population_size": self.ga.population_size,
                "elite_size": self.ga.elite_size,
                "mutation_rate": self.ga.mutation_rate,
                "generations": self.ga.generations,
                "tournament_size": self.ga.tournament_size,
                "seed": self.ga.seed,
            },
            "output_dir": self.output_dir,
        }


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_canonical_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _check_keys(section: dict, allowed, where: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError("unknown config key %s.%s (allowed: %s)"
                              % (where, key, ", ".join(sorted(allowed))))


def _position(obj, where: str, area_m, altitude: float) -> Position3D:
    if isinstance(obj, str):
        if obj == "center":
            return Position3D(area_m[0] / 2.0, area_m[1] / 2.0, altitude)
        if obj == "corner":
            return Position3D(0.0, 0.0, altitude)
        raise ConfigError("%s must be 'center', 'corner', or {x, y, z}" % where)
    if isinstance(obj, dict):
        _check_keys(obj, {"x", "y", "z"}, where)
        try:
            return Position3D(float(obj["x"]), float(obj["y"]), float(obj["z"]))
        except KeyError as exc:
            raise ConfigError("%s needs x, y and z" % where) from exc
    raise ConfigError("%s must be 'center', 'corner', or {x, y, z}" % where)


def _scenario_from_dict(d: dict) -> ScenarioConfig:
    allowed = {"n_eds", "area_km2", "area_m", "gateway", "gateway_altitude_m",
               "moved_gateway", "episodes", "seeds", "reward_mode",
               "service_order", "deterministic_shadowing"}
    _check_keys(d, allowed, "scenario")
    if "area_m" in d and "area_km2" in d:
        raise ConfigError("scenario: give area_m or area_km2, not both")
    if "area_m" in d:
        raw = d["area_m"]
        if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
            raise ConfigError("scenario.area_m must be [width, height]")
        area = (float(raw[0]), float(raw[1]))
    else:
        km2 = float(d.get("area_km2", DEFAULT_AREA_KM2))
        if km2 <= 0:
            raise ConfigError("scenario.area_km2 must be positive")
        side = math.sqrt(km2 * 1e6)
        area = (side, side)
    altitude = float(d.get("gateway_altitude_m", DEFAULT_GATEWAY_ALTITUDE_M))
    gateway = _position(d.get("gateway", "center"), "scenario.gateway",
                        area, altitude)
    moved = _position(d.get("moved_gateway", "corner"),
                      "scenario.moved_gateway", area, altitude)
    seeds = d.get("seeds", [0])
    if not isinstance(seeds, (list, tuple)):
        raise ConfigError("scenario.seeds must be a list of integers")
    try:
        return ScenarioConfig(
            n_eds=int(d.get("n_eds", 6)),
            area_m=area,
            gateway=gateway,
            moved_gateway=moved,
            episodes=int(d.get("episodes", 2000)),
            seeds=tuple(int(s) for s in seeds),
            reward_mode=str(d.get("reward_mode", "per-step")),
            service_order=str(d.get("service_order", "index")),
            deterministic_shadowing=bool(d.get("deterministic_shadowing",
                                               False)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("scenario: %s" % exc) from exc


def _section(cls, d: dict, where: str, field_names):
    _check_keys(d, set(field_names), where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("%s: %s" % (where, exc)) from exc


def from_dict(raw: dict) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, {"scenario", "phy", "channel", "network", "ppo", "ga",
                      "output_dir"}, "top level")
    phy_fields = ("bandwidth_hz", "coding_rate", "noise_figure_db",
                  "carrier_frequency_hz", "tp_levels_dbm")
    ch_fields = ("beta_los", "beta_nlos", "sigma_los_db", "sigma_nlos_db",
                 "sigmoid_alpha", "sigmoid_lambda", "reference_distance_m",
                 "carrier_frequency_hz", "noise_power_dbm")
    ppo_fields = ("gamma", "clip_epsilon", "chi", "learning_rate",
                  "minibatch_size", "epochs_per_update", "update_every",
                  "replay_episodes", "hidden_units", "value_coef",
                  "entropy_coef", "reward_scale", "normalize_advantages",
                  "target_kl", "value_warmup_updates")
    ga_fields = ("population_size", "elite_size", "mutation_rate",
                 "generations", "tournament_size", "seed")
    phy_raw = dict(raw.get("phy") or {})
    if "tp_levels_dbm" in phy_raw:
        phy_raw["tp_levels_dbm"] = tuple(float(t)
                                         for t in phy_raw["tp_levels_dbm"])
    return ExperimentConfig(
        scenario=_scenario_from_dict(dict(raw.get("scenario") or {})),
        phy=_section(LoRaPhyConfig, phy_raw, "phy", phy_fields),
        channel=_section(ChannelConfig, dict(raw.get("channel") or {}),
                         "channel", ch_fields),
        network=_section(NetworkConfig, dict(raw.get("network") or {}),
                         "network", ("rho_max", "circuit_power_mw")),
        ppo=_section(Hyperparams, dict(raw.get("ppo") or {}), "ppo",
                     ppo_fields),
        ga=_section(GAConfig, dict(raw.get("ga") or {}), "ga", ga_fields),
        output_dir=str(raw.get("output_dir", "runs")),
    )


def load_config(path) -> ExperimentConfig:
    """Parse a YAML config file. Parse errors keep their line/column info."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("cannot parse %s: %s" % (path, exc)) from exc
    except OSError as exc:
        raise ConfigError("cannot read %s: %s" % (path, exc)) from exc
    return from_dict(raw)


def atomic_write_json(path, obj) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


@dataclass
class RunManifest:
    """What a subcommand run produced, written atomically at the end."""

    command: str
    config_hash: str
    code_version: str = __version__
    artifacts: dict = field(default_factory=dict)
    csv_schemas: dict = field(default_factory=dict)
    timings_s: dict = field(default_factory=dict)

    def add_artifact(self, name: str, path, schema: str = None) -> None:
        self.artifacts[name] = str(path)
        if schema is not None:
            self.csv_schemas[name] = schema

    def write(self, path) -> None:
        atomic_write_json(path, {
            "command": self.command,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "artifacts": self.artifacts,
            "csv_schemas": self.csv_schemas,
            "timings_s": self.timings_s,
        })
