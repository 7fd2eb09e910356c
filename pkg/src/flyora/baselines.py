"""Benchmark allocators: random, distance-based, genetic, and brute force.

All four return an AllocationState over the same (SF, TP) grid the learned
agent uses; EDs that cannot be placed feasibly are left unassigned. The GA
and the brute-force search share one vectorized metric evaluator that
scores whole populations of candidate assignments at once.
"""

from dataclasses import dataclass

import numpy as np

from . import channel as ch
from . import network as net
from . import phy


class TooManyEdsError(ValueError):
    """More EDs than the SF grid can legally hold (6 SFs x rho_max)."""


class InstanceTooLargeError(ValueError):
    """Brute force was asked to enumerate more than it reasonably can."""


class NoFeasibleIndividualError(RuntimeError):
    """The GA finished without a single constraint-satisfying individual."""


N_SF = len(phy.SPREADING_FACTORS)
N_TP = len(phy.TP_LEVELS_DBM)
N_PAIRS = N_SF * N_TP     # 30 (SF, TP) actions
SKIP = N_PAIRS            # extra brute-force option: leave the ED unassigned

# additive fitness penalty per constraint violation; dwarfs any reachable EE
PENALTY = 1e9


def _decode_pair(index: int) -> tuple:
    # same (SF, TP) ordering as the agent's action space
    return phy.SPREADING_FACTORS[index // N_TP], phy.TP_LEVELS_DBM[index % N_TP]


@dataclass
class _Tables:
    """Per-topology lookup tables for vectorized candidate scoring."""

    rho: np.ndarray        # (N, N_TP) linear SNR per ED per TP level
    feasible: np.ndarray   # (N, N_TP, N_SF) C2 verdict per ED/TP/SF
    p_mw: np.ndarray       # (N_TP,) transmit powers in mW
    bandwidth_hz: float


def _prepare_tables(topo, phy_cfg, ch_cfg, path_loss_db=None) -> _Tables:
    if path_loss_db is None:
        path_loss_db = net.path_losses(topo, ch_cfg)
    losses = np.asarray(path_loss_db, dtype=np.float64)
    tp_dbm = np.asarray(phy_cfg.tp_levels_dbm, dtype=np.float64)
    p_mw = 10.0 ** (tp_dbm / 10.0)
    sigma2_mw = 10.0 ** (ch.noise_power_dbm(ch_cfg, phy_cfg) / 10.0)
    rho = p_mw[None, :] / (10.0 ** (losses[:, None] / 10.0) * sigma2_mw)
    rssi = tp_dbm[None, :] - losses[:, None]                   # (N, N_TP)
    sens = np.array([phy.sensitivity(s, phy_cfg) for s in phy.SPREADING_FACTORS])
    feasible = rssi[:, :, None] >= sens[None, None, :]         # (N, N_TP, N_SF)
    return _Tables(rho=rho, feasible=feasible, p_mw=p_mw,
                   bandwidth_hz=phy_cfg.bandwidth_hz)


def _batch_metrics(sf_m, tp_m, tables: _Tables, rho_max: int,
                   circuit_power_mw: float):
    """Score candidate assignments. sf_m holds SF values (0 = skip), tp_m TP
    level indices; both (P, N). Returns (ee, c1_excess, c2_violations)."""
    sf_m = np.asarray(sf_m)
    tp_m = np.asarray(tp_m)
    p, n = sf_m.shape
    cols = np.arange(n)
    assigned = sf_m != net.SF_UNASSIGNED
    rho_sel = tables.rho[cols[None, :], tp_m] * assigned
    power = (tables.p_mw[tp_m] * assigned).sum(axis=1)
    cap_sum = np.zeros(p)
    c1_excess = np.zeros(p, dtype=np.int64)
    for s in phy.SPREADING_FACTORS:
        on = sf_m == s
        srho = np.where(on, rho_sel, 0.0)
        tot = srho.sum(axis=1, keepdims=True)
        sinr = srho / (tot - srho + 1.0)
        cap_sum += tables.bandwidth_hz * np.log2(1.0 + sinr).sum(axis=1)
        c1_excess += np.maximum(on.sum(axis=1) - rho_max, 0)
    ee = cap_sum / (circuit_power_mw + power)
    sf_idx = np.where(assigned, sf_m - phy.SPREADING_FACTORS[0], 0)
    ok = tables.feasible[cols[None, :], tp_m, sf_idx]
    c2_viol = (assigned & ~ok).sum(axis=1)
    return ee, c1_excess, c2_viol


def _to_allocation(sf_row, tp_row, circuit_power_mw) -> net.AllocationState:
    alloc = net.AllocationState.empty(len(sf_row), circuit_power_mw)
    for i, (s, k) in enumerate(zip(sf_row, tp_row)):
        if s != net.SF_UNASSIGNED:
            alloc.assign(i, int(s), phy.TP_LEVELS_DBM[int(k)])
    return alloc


def random_allocate(topo, seed=None, phy_cfg=phy.DEFAULT_PHY,
                    ch_cfg=ch.DEFAULT_CHANNEL, rho_max=net.DEFAULT_RHO_MAX,
                    circuit_power_mw=net.DEFAULT_CIRCUIT_POWER_MW,
                    max_attempts: int = 30,
                    path_loss_db=None) -> net.AllocationState:
    """Uniformly sample (SF, TP) pairs per ED until both constraints hold.

    An ED is skipped after max_attempts rejected draws.
    """
    rng = np.random.default_rng(seed)
    if path_loss_db is None:
        path_loss_db = net.path_losses(topo, ch_cfg)
    alloc = net.AllocationState.empty(topo.n, circuit_power_mw)
    for i in range(topo.n):
        for _ in range(max_attempts):
            sf, tp = _decode_pair(int(rng.integers(N_PAIRS)))
            if (net.check_c1(alloc, sf, rho_max)
                    and net.check_c2(i, sf, tp, topo, phy_cfg, ch_cfg,
                                     path_loss_db)):
                alloc.assign(i, sf, tp)
                break
    return alloc


def distance_allocate(topo, phy_cfg=phy.DEFAULT_PHY, ch_cfg=ch.DEFAULT_CHANNEL,
                      rho_max=net.DEFAULT_RHO_MAX,
                      circuit_power_mw=net.DEFAULT_CIRCUIT_POWER_MW
                      ) -> net.AllocationState:
    """Nearer EDs get lower SFs: sort by gateway distance, fill SF7..SF12 in
    blocks of rho_max. TP is the smallest level that meets the sensitivity
    under zero-shadowing loss; EDs with no such level are skipped.

    Distance ties break by ED index.
    """
    if topo.n > rho_max * N_SF:
        raise TooManyEdsError(
            "%d EDs exceed capacity %d (= %d SFs x rho_max %d)"
            % (topo.n, rho_max * N_SF, N_SF, rho_max))
    clear_losses = net.path_losses(topo, ch_cfg, include_shadowing=False)
    order = np.lexsort((np.arange(topo.n), topo.distances()))
    alloc = net.AllocationState.empty(topo.n, circuit_power_mw)
    for rank, i in enumerate(order):
        sf = phy.SPREADING_FACTORS[rank // rho_max]
        sens = phy.sensitivity(sf, phy_cfg)
        for tp in phy_cfg.tp_levels_dbm:
            if tp - clear_losses[i] >= sens:
                alloc.assign(int(i), sf, tp)
                break
    return alloc


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 200
    elite_size: int = 20
    mutation_rate: float = 0.6    # chance an offspring gets one gene resampled
    generations: int = 5000
    tournament_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if not 0 <= self.elite_size < self.population_size:
            raise ValueError("elite_size must be in [0, population_size)")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must be in [1, population_size]")


def run_ga(topo, ga: GAConfig, phy_cfg=phy.DEFAULT_PHY,
           ch_cfg=ch.DEFAULT_CHANNEL, rho_max=net.DEFAULT_RHO_MAX,
           circuit_power_mw=net.DEFAULT_CIRCUIT_POWER_MW, path_loss_db=None,
           initial_population=None):
    """Evolve (SF, TP) assignments; fitness is EE minus a large penalty per
    constraint violation. Returns (best AllocationState, best-fitness history).

    initial_population, if given, is a pair of (P, N) arrays (SF values,
    TP level indices) replacing the random initial population.
    """
    rng = np.random.default_rng(ga.seed)
    tables = _prepare_tables(topo, phy_cfg, ch_cfg, path_loss_db)
    n = topo.n
    pop = ga.population_size
    sf_values = np.asarray(phy.SPREADING_FACTORS)
    if initial_population is not None:
        sf_m = np.array(initial_population[0], dtype=np.int64)
        tp_m = np.array(initial_population[1], dtype=np.int64)
        if sf_m.shape != (pop, n) or tp_m.shape != (pop, n):
            raise ValueError("initial population must be two (%d, %d) arrays"
                             % (pop, n))
    else:
        sf_m = sf_values[rng.integers(N_SF, size=(pop, n))]
        tp_m = rng.integers(N_TP, size=(pop, n))

    history = []
    for _ in range(ga.generations):
        ee, c1, c2 = _batch_metrics(sf_m, tp_m, tables, rho_max,
                                    circuit_power_mw)
        fitness = ee - PENALTY * (c1 + c2)
        order = np.argsort(-fitness, kind="stable")
        sf_m, tp_m, fitness = sf_m[order], tp_m[order], fitness[order]
        history.append(float(fitness[0]))

        n_children = pop - ga.elite_size
        # tournament selection over the whole sorted population
        cand = rng.integers(pop, size=(2, n_children, ga.tournament_size))
        parents = cand.min(axis=2)  # sorted by fitness, so min index wins
        pa_sf, pa_tp = sf_m[parents[0]], tp_m[parents[0]]
        pb_sf, pb_tp = sf_m[parents[1]], tp_m[parents[1]]
        take_b = rng.random((n_children, n)) < 0.5   # uniform crossover
        child_sf = np.where(take_b, pb_sf, pa_sf)
        child_tp = np.where(take_b, pb_tp, pa_tp)
        # mutate one random gene of a fraction of offspring
        mutate = rng.random(n_children) < ga.mutation_rate
        idx = np.flatnonzero(mutate)
        gene = rng.integers(n, size=len(idx))
        child_sf[idx, gene] = sf_values[rng.integers(N_SF, size=len(idx))]
        child_tp[idx, gene] = rng.integers(N_TP, size=len(idx))
        sf_m = np.concatenate([sf_m[:ga.elite_size], child_sf])
        tp_m = np.concatenate([tp_m[:ga.elite_size], child_tp])

    ee, c1, c2 = _batch_metrics(sf_m, tp_m, tables, rho_max, circuit_power_mw)
    feasible = (c1 + c2) == 0
    if not feasible.any():
        raise NoFeasibleIndividualError(
            "no constraint-satisfying individual after %d generations"
            % ga.generations)
    best = int(np.argmax(np.where(feasible, ee, -np.inf)))
    return _to_allocation(sf_m[best], tp_m[best], circuit_power_mw), history


def ga_allocate(topo, ga: GAConfig = GAConfig(), phy_cfg=phy.DEFAULT_PHY,
                ch_cfg=ch.DEFAULT_CHANNEL, rho_max=net.DEFAULT_RHO_MAX,
                circuit_power_mw=net.DEFAULT_CIRCUIT_POWER_MW,
                path_loss_db=None) -> net.AllocationState:
    alloc, _ = run_ga(topo, ga, phy_cfg, ch_cfg, rho_max, circuit_power_mw,
                      path_loss_db)
    return alloc


BRUTE_FORCE_MAX_EDS = 4


def brute_force_allocate(topo, phy_cfg=phy.DEFAULT_PHY,
                         ch_cfg=ch.DEFAULT_CHANNEL,
                         rho_max=net.DEFAULT_RHO_MAX,
                         circuit_power_mw=net.DEFAULT_CIRCUIT_POWER_MW,
                         path_loss_db=None) -> net.AllocationState:
    """Exhaustive EE-optimal assignment for tiny instances.

    Every ED gets one of the 30 (SF, TP) pairs or is skipped, so the optimum
    dominates any allocator that may leave EDs unassigned. Ties break toward
    the lexicographically smallest option vector.
    """
    n = topo.n
    if n > BRUTE_FORCE_MAX_EDS:
        raise InstanceTooLargeError(
            "brute force handles at most %d EDs, got %d"
            % (BRUTE_FORCE_MAX_EDS, n))
    tables = _prepare_tables(topo, phy_cfg, ch_cfg, path_loss_db)
    n_opts = N_PAIRS + 1
    grids = np.meshgrid(*([np.arange(n_opts)] * n), indexing="ij")
    options = np.stack(grids).reshape(n, -1).T          # lexicographic rows
    skip = options == SKIP
    sf_m = np.where(skip, net.SF_UNASSIGNED,
                    phy.SPREADING_FACTORS[0] + options // N_TP)
    tp_m = np.where(skip, 0, options % N_TP)
    ee, c1, c2 = _batch_metrics(sf_m, tp_m, tables, rho_max, circuit_power_mw)
    ee = np.where((c1 + c2) == 0, ee, -np.inf)
    best = int(np.argmax(ee))   # first max = lexicographic tie-break
    return _to_allocation(sf_m[best], tp_m[best], circuit_power_mw)
