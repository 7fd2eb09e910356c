"""Network topology, allocation state and the link metrics of the EE objective.

The allocation state is the flattened form of the binary SF-assignment matrix
plus the per-ED transmit powers. SINR only sees co-SF interference; different
SFs are treated as perfectly orthogonal.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import phy
from .channel import ChannelConfig, Position3D, ShadowingSample
from .phy import LoRaPhyConfig, SPREADING_FACTORS, dbm_to_mw

DEFAULT_RHO_MAX = 6          # max EDs sharing one SF
DEFAULT_CIRCUIT_POWER_MW = 10.0

SF_UNASSIGNED = 0            # sentinel in AllocationState.sf


class InvalidAreaError(ValueError):
    pass


class UnallocatedError(RuntimeError):
    """Link metric requested for an ED with no (SF, TP) assignment."""


@dataclass
class Topology:
    """ED positions, gateway pose and the episode's frozen shadowing draws."""

    ed_positions: np.ndarray        # (N, 3) meters
    gateway: Position3D
    shadow_los_db: np.ndarray       # (N,)
    shadow_nlos_db: np.ndarray      # (N,)
    area_m: tuple = (0.0, 0.0)      # (width, height) of the target rectangle
    seed: int | None = None

    def __post_init__(self):
        self.ed_positions = np.asarray(self.ed_positions, dtype=np.float64)
        self.shadow_los_db = np.asarray(self.shadow_los_db, dtype=np.float64)
        self.shadow_nlos_db = np.asarray(self.shadow_nlos_db, dtype=np.float64)
        if self.ed_positions.ndim != 2 or self.ed_positions.shape[1] != 3:
            raise ValueError("ed_positions must have shape (N, 3)")
        if self.n < 1:
            raise ValueError("topology needs at least one ED")
        if self.gateway.z <= 0:
            raise ValueError("gateway altitude must be > 0")

    @property
    def n(self) -> int:
        return self.ed_positions.shape[0]

    def ed(self, i: int) -> Position3D:
        x, y, z = self.ed_positions[i]
        return Position3D(x, y, z)

    def shadowing(self, i: int) -> ShadowingSample:
        return ShadowingSample(float(self.shadow_los_db[i]),
                               float(self.shadow_nlos_db[i]))

    def distances(self) -> np.ndarray:
        """3D ED-gateway distances (meters)."""
        gw = np.array([self.gateway.x, self.gateway.y, self.gateway.z])
        return np.linalg.norm(self.ed_positions - gw, axis=1)

    def to_json(self) -> str:
        doc = {
            "format_version": 1,
            "seed": self.seed,
            "area_m": list(self.area_m),
            "gateway": {"x": self.gateway.x, "y": self.gateway.y, "z": self.gateway.z},
            "eds": [{"x": float(p[0]), "y": float(p[1]), "z": float(p[2])}
                    for p in self.ed_positions],
            "shadow_los_db": [float(v) for v in self.shadow_los_db],
            "shadow_nlos_db": [float(v) for v in self.shadow_nlos_db],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        doc = json.loads(text)
        gw = doc["gateway"]
        return cls(
            ed_positions=np.array([[e["x"], e["y"], e["z"]] for e in doc["eds"]]),
            gateway=Position3D(gw["x"], gw["y"], gw["z"]),
            shadow_los_db=np.array(doc["shadow_los_db"]),
            shadow_nlos_db=np.array(doc["shadow_nlos_db"]),
            area_m=tuple(doc["area_m"]),
            seed=doc["seed"],
        )


def generate_topology(n: int, area_m: tuple, gw: Position3D, seed: int | None,
                      cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
                      deterministic: bool = False) -> Topology:
    """Drop n EDs i.i.d. uniform over the area rectangle at ground level.

    EDs are indexed by ascending slant distance to the gateway, so index t is
    the t-th nearest ED. This gives the sequential allocator a stable meaning
    for each service step while leaving the position distribution untouched.

    Shadowing is drawn once per ED here and held fixed for the episode.
    `deterministic` zeroes the shadowing (for tests and link-budget work).
    """
    width, height = area_m
    if n < 1:
        raise ValueError("n must be >= 1")
    if width <= 0 or height <= 0:
        raise InvalidAreaError(f"area must be positive, got {area_m}")
    rng = np.random.default_rng(seed)
    xy = rng.uniform(low=[0.0, 0.0], high=[width, height], size=(n, 2))
    positions = np.column_stack([xy, np.zeros(n)])
    if deterministic:
        shadow_los = np.zeros(n)
        shadow_nlos = np.zeros(n)
    else:
        shadow_los = rng.normal(0.0, cfg.sigma_los_db, size=n)
        shadow_nlos = rng.normal(0.0, cfg.sigma_nlos_db, size=n)
    gw_xyz = np.array([gw.x, gw.y, gw.z])
    slant = np.linalg.norm(positions - gw_xyz, axis=1)
    order = np.lexsort((positions[:, 1], positions[:, 0], slant))
    return Topology(positions[order], gw, shadow_los[order], shadow_nlos[order],
                    area_m=(float(width), float(height)), seed=seed)


def path_losses(topo: Topology, cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
                include_shadowing: bool = True) -> np.ndarray:
    """Per-ED A2G path loss (dB) under the topology's frozen shadowing."""
    losses = np.empty(topo.n)
    for i in range(topo.n):
        shadow = topo.shadowing(i) if include_shadowing else ch.NO_SHADOWING
        losses[i] = ch.a2g_path_loss(topo.ed(i), topo.gateway, cfg, shadow)
    return losses


@dataclass
class AllocationState:
    """Per-ED SF and TP assignment; sentinel values mean "not allocated".

    sf holds 0 for unassigned EDs (each ED carries at most one SF by
    construction); tp_dbm holds NaN for unassigned EDs.
    """

    sf: np.ndarray                  # (N,) int, 0 = unassigned
    tp_dbm: np.ndarray              # (N,) float, NaN = unassigned
    circuit_power_mw: float = DEFAULT_CIRCUIT_POWER_MW

    @classmethod
    def empty(cls, n: int,
              circuit_power_mw: float = DEFAULT_CIRCUIT_POWER_MW) -> "AllocationState":
        return cls(sf=np.zeros(n, dtype=np.int64),
                   tp_dbm=np.full(n, np.nan),
                   circuit_power_mw=circuit_power_mw)

    def __post_init__(self):
        self.sf = np.asarray(self.sf, dtype=np.int64)
        self.tp_dbm = np.asarray(self.tp_dbm, dtype=np.float64)
        if self.circuit_power_mw <= 0:
            raise ValueError("circuit power must be > 0")

    @property
    def n(self) -> int:
        return self.sf.shape[0]

    @property
    def assigned(self) -> np.ndarray:
        return self.sf != SF_UNASSIGNED

    def is_assigned(self, i: int) -> bool:
        return self.sf[i] != SF_UNASSIGNED

    def assign(self, i: int, sf: int, tp_dbm: float):
        phy.validate_sf(sf)
        self.sf[i] = sf
        self.tp_dbm[i] = tp_dbm

    def clear(self, i: int):
        self.sf[i] = SF_UNASSIGNED
        self.tp_dbm[i] = np.nan

    def count_on_sf(self, sf: int) -> int:
        return int(np.count_nonzero(self.sf == sf))

    def copy(self) -> "AllocationState":
        return AllocationState(self.sf.copy(), self.tp_dbm.copy(),
                               self.circuit_power_mw)

    def to_json(self, topo: Topology | None = None,
                phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
                ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL) -> str:
        eds = []
        for i in range(self.n):
            if self.is_assigned(i):
                eds.append({"sf": int(self.sf[i]), "tp_dbm": float(self.tp_dbm[i]),
                            "skipped": False})
            else:
                eds.append({"sf": None, "tp_dbm": None, "skipped": True})
        doc = {
            "format_version": 1,
            "circuit_power_mw": self.circuit_power_mw,
            "eds": eds,
        }
        if topo is not None:
            doc["summary"] = {
                "ee": energy_efficiency(self, topo, phy_cfg, ch_cfg),
                "feasible_count": int(np.count_nonzero(self.assigned)),
            }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AllocationState":
        doc = json.loads(text)
        n = len(doc["eds"])
        state = cls.empty(n, doc["circuit_power_mw"])
        for i, e in enumerate(doc["eds"]):
            if not e["skipped"]:
                state.sf[i] = e["sf"]
                state.tp_dbm[i] = e["tp_dbm"]
        return state


@dataclass
class LinkReport:
    """Per-ED link metrics for one allocation (NaN/0 where unassigned)."""

    path_loss_db: np.ndarray
    rssi_dbm: np.ndarray
    snr: np.ndarray          # linear
    sinr: np.ndarray         # linear
    capacity_bps: np.ndarray


def _resolve_losses(topo, cfg, path_loss_db):
    if path_loss_db is None:
        return path_losses(topo, cfg)
    return np.asarray(path_loss_db, dtype=np.float64)


def snr_values(alloc: AllocationState, topo: Topology,
               phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
               ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
               path_loss_db: np.ndarray | None = None) -> np.ndarray:
    """Linear SNR per ED; NaN where unassigned."""
    losses = _resolve_losses(topo, ch_cfg, path_loss_db)
    sigma2_mw = dbm_to_mw(ch.noise_power_dbm(ch_cfg, phy_cfg))
    with np.errstate(invalid="ignore"):
        p_mw = 10.0 ** (alloc.tp_dbm / 10.0)
        rho = p_mw / (10.0 ** (0.1 * losses) * sigma2_mw)
    rho[~alloc.assigned] = np.nan
    return rho


def sinr_values(alloc: AllocationState, topo: Topology,
                phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
                ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
                path_loss_db: np.ndarray | None = None) -> np.ndarray:
    """Linear SINR per ED: rho / (co-SF interference + 1); NaN where unassigned."""
    rho = snr_values(alloc, topo, phy_cfg, ch_cfg, path_loss_db)
    sinr = np.full(alloc.n, np.nan)
    for sf in SPREADING_FACTORS:
        on_sf = (alloc.sf == sf)
        if not on_sf.any():
            continue
        total = np.nansum(rho[on_sf])
        # each ED divides by the other EDs' rho on its SF, plus 1
        sinr[on_sf] = rho[on_sf] / (total - rho[on_sf] + 1.0)
    return sinr


def snr(ed_index: int, alloc: AllocationState, topo: Topology,
        phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
        ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
        path_loss_db: np.ndarray | None = None) -> float:
    if not alloc.is_assigned(ed_index):
        raise UnallocatedError(f"ED {ed_index} has no assignment")
    return float(snr_values(alloc, topo, phy_cfg, ch_cfg, path_loss_db)[ed_index])


def sinr(ed_index: int, alloc: AllocationState, topo: Topology,
         phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
         ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
         path_loss_db: np.ndarray | None = None) -> float:
    if not alloc.is_assigned(ed_index):
        raise UnallocatedError(f"ED {ed_index} has no assignment")
    return float(sinr_values(alloc, topo, phy_cfg, ch_cfg, path_loss_db)[ed_index])


def capacity(ed_index: int, alloc: AllocationState, topo: Topology,
             phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
             ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
             path_loss_db: np.ndarray | None = None) -> float:
    """Shannon capacity (bits/s) of one ED's uplink under co-SF interference."""
    v = sinr(ed_index, alloc, topo, phy_cfg, ch_cfg, path_loss_db)
    return phy_cfg.bandwidth_hz * math.log2(1.0 + v)


def capacities(alloc: AllocationState, topo: Topology,
               phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
               ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
               path_loss_db: np.ndarray | None = None) -> np.ndarray:
    """Per-ED Shannon capacity (bits/s); 0 where unassigned."""
    v = sinr_values(alloc, topo, phy_cfg, ch_cfg, path_loss_db)
    caps = phy_cfg.bandwidth_hz * np.log2(1.0 + np.where(np.isnan(v), 0.0, v))
    return caps


def energy_efficiency(alloc: AllocationState, topo: Topology,
                      phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
                      ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
                      path_loss_db: np.ndarray | None = None) -> float:
    """System EE (bits/s per mW): sum capacity / (circuit power + sum TP in mW).

    Unassigned EDs contribute neither capacity nor transmit power.
    """
    caps = capacities(alloc, topo, phy_cfg, ch_cfg, path_loss_db)
    assigned = alloc.assigned
    p_total_mw = alloc.circuit_power_mw
    if assigned.any():
        p_total_mw += float(np.sum(10.0 ** (alloc.tp_dbm[assigned] / 10.0)))
    return float(np.sum(caps[assigned])) / p_total_mw


def link_report(alloc: AllocationState, topo: Topology,
                phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
                ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
                path_loss_db: np.ndarray | None = None) -> LinkReport:
    losses = _resolve_losses(topo, ch_cfg, path_loss_db)
    rssi = np.where(alloc.assigned, alloc.tp_dbm - losses, np.nan)
    return LinkReport(
        path_loss_db=losses,
        rssi_dbm=rssi,
        snr=snr_values(alloc, topo, phy_cfg, ch_cfg, losses),
        sinr=sinr_values(alloc, topo, phy_cfg, ch_cfg, losses),
        capacity_bps=capacities(alloc, topo, phy_cfg, ch_cfg, losses),
    )


def check_c1(alloc: AllocationState, sf: int,
             rho_max: int = DEFAULT_RHO_MAX) -> bool:
    """True iff one more ED can join `sf` without exceeding rho_max users."""
    return alloc.count_on_sf(sf) + 1 <= rho_max


def check_c2(ed_index: int, sf: int, tp_dbm: float, topo: Topology,
             phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
             ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
             path_loss_db: np.ndarray | None = None) -> bool:
    """True iff the uplink at (sf, tp) meets the receiver sensitivity."""
    losses = _resolve_losses(topo, ch_cfg, path_loss_db)
    rssi_dbm = tp_dbm - losses[ed_index]
    return phy.is_decodable(rssi_dbm, sf, phy_cfg)


def validate_allocation(alloc: AllocationState, topo: Topology,
                        phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
                        ch_cfg: ChannelConfig = ch.DEFAULT_CHANNEL,
                        rho_max: int = DEFAULT_RHO_MAX,
                        path_loss_db: np.ndarray | None = None) -> list[str]:
    """Re-check every constraint of the allocation problem on a finished state.

    Returns a list of human-readable violations (empty when the state is
    valid): TP bounds and level membership, SF validity, per-SF occupancy,
    and the sensitivity constraint for every assigned ED.
    """
    problems = []
    losses = _resolve_losses(topo, ch_cfg, path_loss_db)
    max_tp_mw = dbm_to_mw(phy_cfg.max_tp_dbm)
    for i in range(alloc.n):
        if not alloc.is_assigned(i):
            continue
        sf = int(alloc.sf[i])
        tp = float(alloc.tp_dbm[i])
        if sf not in SPREADING_FACTORS:
            problems.append(f"ED {i}: invalid SF {sf}")
            continue
        if tp not in phy_cfg.tp_levels_dbm:
            problems.append(f"ED {i}: TP {tp} dBm not in the configured level set")
        if not 0.0 <= dbm_to_mw(tp) <= max_tp_mw:
            problems.append(f"ED {i}: TP {tp} dBm outside [0, p_max]")
        if not phy.is_decodable(tp - losses[i], sf, phy_cfg):
            problems.append(f"ED {i}: RSSI {tp - losses[i]:.2f} dBm below "
                            f"SF{sf} sensitivity")
    for sf in SPREADING_FACTORS:
        count = alloc.count_on_sf(sf)
        if count > rho_max:
            problems.append(f"SF{sf} assigned to {count} EDs (max {rho_max})")
    return problems
