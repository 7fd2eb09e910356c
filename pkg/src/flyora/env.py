"""Episodic environment for sequential per-ED (SF, TP) assignment.

Each episode draws a fresh topology; step t serves one ED with a joint
(SF, TP) action. Actions that violate the SF-occupancy constraint (C1) or
the sensitivity constraint (C2) leave the ED unallocated and earn a null
reward; accepted actions earn the current system EE.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import channel as chmod
from . import network as net
from . import phy
from .channel import ChannelConfig, Position3D
from .phy import LoRaPhyConfig

N_SF = len(phy.SPREADING_FACTORS)
N_TP = len(phy.TP_LEVELS_DBM)
N_ACTIONS = N_SF * N_TP


class EpisodeFinishedError(RuntimeError):
    """step() called after the episode already served every ED."""


def decode_action(index: int) -> tuple[int, float]:
    """Map an action index in [0, 30) to an (sf, tp_dbm) pair."""
    if not 0 <= index < N_ACTIONS:
        raise ValueError(f"action index must be in [0, {N_ACTIONS}), got {index}")
    sf = phy.SPREADING_FACTORS[index // N_TP]
    tp = phy.TP_LEVELS_DBM[index % N_TP]
    return sf, tp


def encode_action(sf: int, tp_dbm: float) -> int:
    return (phy.SPREADING_FACTORS.index(sf) * N_TP
            + phy.TP_LEVELS_DBM.index(tp_dbm))


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class LoRaAllocEnv:
    """Sequential allocation MDP over a LoRa network with a flying gateway.

    Observation (length 3N, all entries in [-1, 1]):
      [0:N)   allocated SF code, 0 if unallocated else (sf - 6) / 6
      [N:2N)  allocated TP code, -1 if unallocated else (tp - 2) / 12
      [2N:3N) current Shannon rate normalized by a config-derived upper bound

    reward_mode "per-step" pays the running EE after every accepted action;
    "terminal" pays the final EE once, and only when every ED was allocated.
    """

    def __init__(self, n_eds: int, area_m: tuple, gateway: Position3D,
                 phy_cfg: LoRaPhyConfig = phy.DEFAULT_PHY,
                 ch_cfg: ChannelConfig = chmod.DEFAULT_CHANNEL,
                 rho_max: int = net.DEFAULT_RHO_MAX,
                 circuit_power_mw: float = net.DEFAULT_CIRCUIT_POWER_MW,
                 seed: int | None = None,
                 reward_mode: str = "per-step",
                 service_order: str = "index",
                 deterministic_shadowing: bool = False):
        if reward_mode not in ("per-step", "terminal"):
            raise ValueError(f"unknown reward mode {reward_mode!r}")
        if service_order not in ("index", "shuffled"):
            raise ValueError(f"unknown service order {service_order!r}")
        self.n_eds = n_eds
        self.area_m = tuple(area_m)
        self.gateway = gateway
        self.phy_cfg = phy_cfg
        self.ch_cfg = ch_cfg
        self.rho_max = rho_max
        self.circuit_power_mw = circuit_power_mw
        self.reward_mode = reward_mode
        self.service_order = service_order
        self.deterministic_shadowing = deterministic_shadowing
        self._episode_rng = np.random.default_rng(seed)
        self._capacity_scale = self._rate_normalizer()
        self.topology = None
        self.allocation = None
        self.path_loss_db = None
        self.episode_seed = None

    @property
    def obs_dim(self) -> int:
        return 3 * self.n_eds

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    @property
    def episode_length(self) -> int:
        return self.n_eds

    def _rate_normalizer(self) -> float:
        # best-case SNR: max TP at the nadir distance, all-LoS, with a
        # 3-sigma shadowing allowance; observations are clipped afterwards
        d_min = max(self.ch_cfg.reference_distance_m, self.gateway.z)
        margin = 3.0 * max(self.ch_cfg.sigma_los_db, self.ch_cfg.sigma_nlos_db)
        loss_floor = (chmod.free_space_path_loss(self.ch_cfg)
                      + 10.0 * self.ch_cfg.beta_los * np.log10(d_min) - margin)
        sigma2_mw = phy.dbm_to_mw(chmod.noise_power_dbm(self.ch_cfg, self.phy_cfg))
        rho_bound = (phy.dbm_to_mw(self.phy_cfg.max_tp_dbm)
                     / (10.0 ** (0.1 * loss_floor) * sigma2_mw))
        return self.phy_cfg.bandwidth_hz * np.log2(1.0 + rho_bound)

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Start a new episode on a fresh topology; returns the initial observation."""
        if seed is None:
            seed = int(self._episode_rng.integers(0, 2**63 - 1))
        self.episode_seed = seed
        self.topology = net.generate_topology(
            self.n_eds, self.area_m, self.gateway, seed, self.ch_cfg,
            deterministic=self.deterministic_shadowing)
        self.path_loss_db = net.path_losses(self.topology, self.ch_cfg)
        self.allocation = net.AllocationState.empty(self.n_eds, self.circuit_power_mw)
        if self.service_order == "shuffled":
            order_rng = np.random.default_rng([seed, 1])
            self._order = order_rng.permutation(self.n_eds)
        else:
            self._order = np.arange(self.n_eds)
        self._step_index = 0
        self.episode_reward = 0.0
        self.accepted_steps = 0
        self.trace = []
        return self._observe()

    def _observe(self) -> np.ndarray:
        alloc = self.allocation
        assigned = alloc.assigned
        sf_code = np.where(assigned, (alloc.sf - 6) / 6.0, 0.0)
        tp_code = np.where(assigned, (alloc.tp_dbm - 2.0) / 12.0, -1.0)
        caps = net.capacities(alloc, self.topology, self.phy_cfg, self.ch_cfg,
                              self.path_loss_db)
        rate_code = np.clip(caps / self._capacity_scale, 0.0, 1.0)
        return np.concatenate([sf_code, tp_code, rate_code])

    @property
    def current_ed(self) -> int:
        return int(self._order[self._step_index])

    @property
    def done(self) -> bool:
        return self._step_index >= self.n_eds

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("episode already served every ED")
        ed = self.current_ed
        sf, tp = decode_action(int(action))
        violated = None
        if not net.check_c1(self.allocation, sf, self.rho_max):
            violated = "C1"
        elif not net.check_c2(ed, sf, tp, self.topology, self.phy_cfg,
                              self.ch_cfg, self.path_loss_db):
            violated = "C2"
        accepted = violated is None
        if accepted:
            self.allocation.assign(ed, sf, tp)
            self.accepted_steps += 1
        self._step_index += 1
        done = self.done

        if self.reward_mode == "per-step":
            reward = self.current_ee() if accepted else 0.0
        else:
            all_allocated = done and bool(self.allocation.assigned.all())
            reward = self.current_ee() if all_allocated else 0.0

        self.episode_reward += reward
        self.trace.append({"step": self._step_index - 1, "ed_index": ed,
                           "action": int(action), "accepted": accepted,
                           "reward": reward})
        info = {"ed_index": ed, "constraint_violated": violated,
                "accepted": accepted}
        return StepResult(self._observe(), reward, done, info)

    def current_ee(self) -> float:
        """Energy efficiency of the allocation built so far."""
        return net.energy_efficiency(self.allocation, self.topology,
                                     self.phy_cfg, self.ch_cfg, self.path_loss_db)

    def action_mask(self) -> np.ndarray:
        """Per-action feasibility (C1 and C2) for the ED about to be served."""
        if self.done:
            raise EpisodeFinishedError("episode already served every ED")
        ed = self.current_ed
        loss = self.path_loss_db[ed]
        mask = np.zeros(N_ACTIONS, dtype=bool)
        for a in range(N_ACTIONS):
            sf, tp = decode_action(a)
            mask[a] = (net.check_c1(self.allocation, sf, self.rho_max)
                       and phy.is_decodable(tp - loss, sf, self.phy_cfg))
        return mask

    @property
    def accuracy(self) -> float:
        """Fraction of steps so far whose action satisfied both constraints."""
        if self._step_index == 0:
            return 0.0
        return self.accepted_steps / self._step_index

    def write_trace(self, path):
        """Dump the episode trace as JSON lines."""
        with open(path, "w") as fh:
            for row in self.trace:
                fh.write(json.dumps(row) + "\n")
