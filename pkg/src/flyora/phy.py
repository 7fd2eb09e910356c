"""LoRa physical-layer arithmetic.

SNR demodulation limits, receiver sensitivity, raw data rate and the
decodability predicate, plus the dB/dBm conversion helpers used by the
rest of the package. Everything here is a pure function of an immutable
config, so the module is safe to share across threads and processes.
"""

import math
from dataclasses import dataclass, field

SPREADING_FACTORS = (7, 8, 9, 10, 11, 12)

# Discrete ED transmit-power levels (dBm).
TP_LEVELS_DBM = (2.0, 5.0, 8.0, 11.0, 14.0)

# Required SNR at the receiver per spreading factor (dB), from the Semtech
# demodulator characterization. Uniform -2.5 dB steps.
SNR_LIMITS_DB = {7: -7.5, 8: -10.0, 9: -12.5, 10: -15.0, 11: -17.5, 12: -20.0}

# Thermal noise power density used by the sensitivity relation (dBm/Hz).
NOISE_DENSITY_DBM_PER_HZ = -175.0

_VALID_BANDWIDTHS_HZ = (125e3, 250e3, 500e3)


def dbm_to_mw(dbm: float) -> float:
    """Convert a dBm power level to linear milliwatts."""
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    """Convert linear milliwatts to dBm. mw must be > 0."""
    return 10.0 * math.log10(mw)


def db_to_linear(db: float) -> float:
    """Convert a dB ratio to a linear ratio."""
    return 10.0 ** (db / 10.0)


@dataclass(frozen=True)
class LoRaPhyConfig:
    """Static LoRa PHY parameters.

    coding_rate is the 4/(4+n) fraction itself (0.8 for n=1), not n.
    noise_density_dbm_per_hz is the -175 dBm/Hz constant of the
    sensitivity relation; override only for sensitivity studies.
    """

    bandwidth_hz: float = 125e3
    coding_rate: float = 4.0 / 5.0
    noise_figure_db: float = 6.0
    carrier_frequency_hz: float = 868e6  # EU868 ISM band
    noise_density_dbm_per_hz: float = NOISE_DENSITY_DBM_PER_HZ
    snr_limits_db: dict = field(default_factory=lambda: dict(SNR_LIMITS_DB))
    tp_levels_dbm: tuple = TP_LEVELS_DBM

    def __post_init__(self):
        if self.bandwidth_hz not in _VALID_BANDWIDTHS_HZ:
            raise ValueError(f"bandwidth must be one of {_VALID_BANDWIDTHS_HZ} Hz, "
                             f"got {self.bandwidth_hz}")
        if not 0.0 < self.coding_rate <= 4.0 / 5.0:
            raise ValueError(f"coding rate must be in (0, 4/5], got {self.coding_rate}")
        limits = [self.snr_limits_db[sf] for sf in sorted(self.snr_limits_db)]
        if sorted(self.snr_limits_db) != list(SPREADING_FACTORS):
            raise ValueError("snr_limits_db must cover exactly SF7..SF12")
        if any(b >= a for a, b in zip(limits, limits[1:])):
            raise ValueError("snr_limits_db must be strictly decreasing in SF")
        if not self.tp_levels_dbm or list(self.tp_levels_dbm) != sorted(self.tp_levels_dbm):
            raise ValueError("tp_levels_dbm must be a nonempty ascending sequence")

    @property
    def max_tp_dbm(self) -> float:
        return self.tp_levels_dbm[-1]


DEFAULT_PHY = LoRaPhyConfig()


def validate_sf(sf: int) -> int:
    if sf not in SPREADING_FACTORS:
        raise ValueError(f"spreading factor must be in {SPREADING_FACTORS}, got {sf}")
    return sf


def validate_tp(tp_dbm: float, cfg: LoRaPhyConfig = DEFAULT_PHY) -> float:
    if tp_dbm not in cfg.tp_levels_dbm:
        raise ValueError(f"transmit power must be one of {cfg.tp_levels_dbm} dBm, "
                         f"got {tp_dbm}")
    return tp_dbm


def snr_limit(sf: int, cfg: LoRaPhyConfig = DEFAULT_PHY) -> float:
    """Minimum SNR (dB) at which an SF-`sf` signal is still demodulable."""
    validate_sf(sf)
    return cfg.snr_limits_db[sf]


def sensitivity(sf: int, cfg: LoRaPhyConfig = DEFAULT_PHY) -> float:
    """Receiver sensitivity (dBm) for the given SF.

    sensitivity = noise_density + 10 log10(BW) + NF + snr_limit(sf)
    """
    return (cfg.noise_density_dbm_per_hz
            + 10.0 * math.log10(cfg.bandwidth_hz)
            + cfg.noise_figure_db
            + snr_limit(sf, cfg))


def lora_data_rate(sf: int, cfg: LoRaPhyConfig = DEFAULT_PHY) -> float:
    """Raw LoRa bit rate (bits/s): SF * BW / 2^SF * CR."""
    validate_sf(sf)
    return sf * cfg.bandwidth_hz / (2.0 ** sf) * cfg.coding_rate


def is_decodable(rssi_dbm: float, sf: int, cfg: LoRaPhyConfig = DEFAULT_PHY) -> bool:
    """True iff the received power meets the SF's sensitivity (boundary inclusive)."""
    return sensitivity(sf, cfg) <= rssi_dbm
