"""Baseline allocator tests: random, distance-ordered, GA, brute force."""

import numpy as np
import pytest

from flyora import baselines as bl
from flyora import network as net
from flyora import phy

from conftest import AREA, CENTER


def make_topo(n=3, seed=0, deterministic=True):
    return net.generate_topology(n, AREA, CENTER, seed,
                                 deterministic=deterministic)


def brute_by_nested_loops(topo):
    """Independent exhaustive optimum: plain Python loops over every option."""
    from itertools import product
    losses = net.path_losses(topo)
    best_ee, best = -1.0, None
    options = [(sf, tp) for sf in phy.SPREADING_FACTORS
               for tp in phy.TP_LEVELS_DBM] + [None]
    for combo in product(options, repeat=topo.n):
        alloc = net.AllocationState.empty(topo.n)
        for i, opt in enumerate(combo):
            if opt is not None:
                alloc.assign(i, opt[0], opt[1])
        if net.validate_allocation(alloc, topo, path_loss_db=losses):
            continue
        ee = net.energy_efficiency(alloc, topo, path_loss_db=losses)
        if ee > best_ee:
            best_ee, best = ee, alloc
    return best_ee, best


def test_random_allocate_deterministic_and_valid():
    topo = make_topo(n=6, seed=2, deterministic=False)
    a = bl.random_allocate(topo, seed=9)
    b = bl.random_allocate(topo, seed=9)
    assert np.array_equal(a.sf, b.sf)
    assert np.array_equal(a.tp_dbm, b.tp_dbm, equal_nan=True)
    assert net.validate_allocation(a, topo) == []
    c = bl.random_allocate(topo, seed=10)
    assert not (np.array_equal(a.sf, c.sf)
                and np.array_equal(a.tp_dbm, c.tp_dbm, equal_nan=True))


def test_random_allocate_skips_impossible_eds():
    topo = make_topo(n=2)
    heavy = np.full(2, 200.0)      # nothing decodes through 200 dB
    alloc = bl.random_allocate(topo, seed=0, path_loss_db=heavy)
    assert not alloc.assigned.any()


def test_distance_allocate_blocks_and_validity():
    topo = net.generate_topology(14, AREA, CENTER, 5, deterministic=True)
    alloc = bl.distance_allocate(topo)
    # EDs arrive distance-sorted, so SF blocks follow the index order
    d = topo.distances()
    assert (np.diff(d) >= 0.0).all()
    expected_sf = [7] * 6 + [8] * 6 + [9] * 2
    assert list(alloc.sf) == expected_sf
    assert net.validate_allocation(alloc, topo) == []
    # minimal TP: one level down must break the sensitivity
    losses = net.path_losses(topo, include_shadowing=False)
    for i in range(topo.n):
        tp = alloc.tp_dbm[i]
        k = phy.TP_LEVELS_DBM.index(tp)
        if k > 0:
            weaker = phy.TP_LEVELS_DBM[k - 1]
            assert not phy.is_decodable(weaker - losses[i], int(alloc.sf[i]))


def test_distance_allocate_rejects_overfull_network():
    topo = net.generate_topology(37, AREA, CENTER, 1)
    with pytest.raises(bl.TooManyEdsError):
        bl.distance_allocate(topo)


def test_brute_force_matches_independent_exhaustive_search():
    for seed in (3, 4):
        topo = make_topo(n=2, seed=seed)
        ref_ee, _ = brute_by_nested_loops(topo)
        alloc = bl.brute_force_allocate(topo)
        assert net.validate_allocation(alloc, topo) == []
        ee = net.energy_efficiency(alloc, topo)
        assert ee == pytest.approx(ref_ee, rel=1e-12)


def test_brute_force_size_cap():
    topo = make_topo(n=5)
    with pytest.raises(bl.InstanceTooLargeError):
        bl.brute_force_allocate(topo)


def test_brute_force_skips_undecodable_ed():
    topo = make_topo(n=2)
    losses = net.path_losses(topo)
    heavy = np.array([losses[0], 200.0])    # second ED is unreachable
    alloc = bl.brute_force_allocate(topo, path_loss_db=heavy)
    assert alloc.is_assigned(0)
    assert not alloc.is_assigned(1)


def test_ga_config_validation():
    with pytest.raises(ValueError):
        bl.GAConfig(population_size=1)
    with pytest.raises(ValueError):
        bl.GAConfig(elite_size=200, population_size=200)
    with pytest.raises(ValueError):
        bl.GAConfig(mutation_rate=1.5)
    with pytest.raises(ValueError):
        bl.GAConfig(generations=0)
    with pytest.raises(ValueError):
        bl.GAConfig(tournament_size=0)


def test_ga_deterministic_and_elitist():
    topo = make_topo(n=3, seed=6)
    cfg = bl.GAConfig(generations=60, seed=4)
    a, hist_a = bl.run_ga(topo, cfg)
    b, hist_b = bl.run_ga(topo, cfg)
    assert hist_a == hist_b
    assert np.array_equal(a.sf, b.sf)
    # elitism: the best penalized fitness never decreases
    assert all(x <= y + 1e-9 for x, y in zip(hist_a, hist_a[1:]))
    assert net.validate_allocation(a, topo) == []


def test_ga_reaches_brute_force_optimum():
    topo = make_topo(n=3, seed=8)
    best = net.energy_efficiency(bl.brute_force_allocate(topo), topo)
    ga = bl.ga_allocate(topo, bl.GAConfig(generations=200, seed=0))
    assert net.energy_efficiency(ga, topo) == pytest.approx(best, rel=0.02)


def test_ga_reports_infeasible_instances():
    topo = make_topo(n=2)
    heavy = np.full(2, 200.0)      # no gene assignment can satisfy C2
    with pytest.raises(bl.NoFeasibleIndividualError):
        bl.run_ga(topo, bl.GAConfig(generations=5, seed=0),
                  path_loss_db=heavy)


def test_ga_accepts_seed_population():
    topo = make_topo(n=3, seed=12)
    cfg = bl.GAConfig(generations=5, seed=2)
    pop = cfg.population_size
    sf0 = np.full((pop, 3), 7)
    tp0 = np.full((pop, 3), 4)     # index of 14 dBm
    alloc, hist = bl.run_ga(topo, cfg, initial_population=(sf0, tp0))
    assert len(hist) == 5
    with pytest.raises(ValueError):
        bl.run_ga(topo, cfg, initial_population=(sf0[:, :2], tp0[:, :2]))


def test_pair_decoding_covers_action_set():
    pairs = {bl._decode_pair(k) for k in range(bl.N_PAIRS)}
    assert len(pairs) == 30
    sfs = {p[0] for p in pairs}
    tps = {p[1] for p in pairs}
    assert sfs == set(phy.SPREADING_FACTORS)
    assert tps == set(phy.TP_LEVELS_DBM)
