"""Probabilistic air-to-ground (A2G) channel between ground EDs and a UAV gateway.

The path loss mixes a LoS and an nLoS log-distance component, weighted by an
elevation-angle sigmoid LoS probability. Shadowing draws are injected
explicitly (they are sampled once per ED per episode by the topology
generator), which keeps every function here pure.
"""

import math
from dataclasses import dataclass

from .phy import LoRaPhyConfig, DEFAULT_PHY

LIGHT_SPEED_M_S = 299_792_458.0


class ZeroDistanceError(ValueError):
    """ED and gateway coincide; geometry is undefined."""


@dataclass(frozen=True)
class Position3D:
    """A point in meters; z is altitude above ground."""

    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("coordinates must be finite")
        if self.z < 0.0:
            raise ValueError(f"altitude must be >= 0, got {self.z}")

    def distance_to(self, other: "Position3D") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


@dataclass(frozen=True)
class ShadowingSample:
    """Per-link shadowing draws (dB) for the LoS and nLoS components."""

    los_db: float = 0.0
    nlos_db: float = 0.0


NO_SHADOWING = ShadowingSample(0.0, 0.0)


@dataclass(frozen=True)
class ChannelConfig:
    """A2G propagation parameters.

    sigmoid_alpha/sigmoid_lambda are the LoS-probability constants for a
    suburban environment; noise_power_dbm left at None derives the Gaussian
    noise power from the PHY config (noise density + 10log10(BW) + NF) so it
    stays consistent with the receiver sensitivity.
    """

    beta_los: float = 2.0
    beta_nlos: float = 2.5
    sigma_los_db: float = 5.0
    sigma_nlos_db: float = 20.0
    sigmoid_alpha: float = 9.61
    sigmoid_lambda: float = 0.16
    reference_distance_m: float = 1.0
    carrier_frequency_hz: float = 868e6
    noise_power_dbm: float | None = None

    def __post_init__(self):
        if not self.beta_los > 0:
            raise ValueError("beta_los must be > 0")
        if self.beta_nlos < self.beta_los:
            raise ValueError("beta_nlos must be >= beta_los")
        if self.sigma_los_db < 0 or self.sigma_nlos_db < 0:
            raise ValueError("shadowing std-devs must be >= 0")
        if self.reference_distance_m <= 0:
            raise ValueError("reference distance must be > 0")


DEFAULT_CHANNEL = ChannelConfig()


def noise_power_dbm(cfg: ChannelConfig = DEFAULT_CHANNEL,
                    phy: LoRaPhyConfig = DEFAULT_PHY) -> float:
    """Gaussian noise power (dBm) over the receive bandwidth."""
    if cfg.noise_power_dbm is not None:
        return cfg.noise_power_dbm
    return (phy.noise_density_dbm_per_hz
            + 10.0 * math.log10(phy.bandwidth_hz)
            + phy.noise_figure_db)


def free_space_path_loss(cfg: ChannelConfig = DEFAULT_CHANNEL) -> float:
    """Free-space loss (dB) at the reference distance: 20 log10(d_r f 4 pi / c)."""
    return 20.0 * math.log10(
        cfg.reference_distance_m * cfg.carrier_frequency_hz * 4.0 * math.pi
        / LIGHT_SPEED_M_S)


def elevation_angle(ed: Position3D, gw: Position3D) -> float:
    """Gateway elevation angle (degrees) seen from the ED: arcsin(dz / d_3d)."""
    d = ed.distance_to(gw)
    if d == 0.0:
        raise ZeroDistanceError("ED and gateway positions coincide")
    if gw.z <= ed.z:
        raise ValueError("gateway must be above the ED")
    return math.degrees(math.asin((gw.z - ed.z) / d))


def los_probability(theta_deg: float, cfg: ChannelConfig = DEFAULT_CHANNEL) -> float:
    """LoS probability for an elevation angle: 1 / (1 + a exp(-l (theta - a)))."""
    a, lam = cfg.sigmoid_alpha, cfg.sigmoid_lambda
    return 1.0 / (1.0 + a * math.exp(-lam * (theta_deg - a)))


def a2g_path_loss(ed: Position3D, gw: Position3D,
                  cfg: ChannelConfig = DEFAULT_CHANNEL,
                  shadow: ShadowingSample = NO_SHADOWING) -> float:
    """Mean A2G path loss (dB): P_los * l_los + (1 - P_los) * l_nlos.

    Each component is free-space loss at the reference distance plus a
    log-distance term with its own exponent plus its shadowing draw.
    """
    d = ed.distance_to(gw)
    if d == 0.0:
        raise ZeroDistanceError("ED and gateway positions coincide")
    p_los = los_probability(elevation_angle(ed, gw), cfg)
    l_fs = free_space_path_loss(cfg)
    log_d = math.log10(d)
    l_los = l_fs + 10.0 * cfg.beta_los * log_d + shadow.los_db
    l_nlos = l_fs + 10.0 * cfg.beta_nlos * log_d + shadow.nlos_db
    return p_los * l_los + (1.0 - p_los) * l_nlos


def rssi(tp_dbm: float, path_loss_db: float) -> float:
    """Received signal strength (dBm) of an uplink sent at tp_dbm."""
    return tp_dbm - path_loss_db
