"""Command-line experiment runner.

Subcommands:
  train       train an agent, write checkpoint + learning curve + action dist
  compare     evaluate the agent against the baseline allocators
  asr         relocate the gateway: pretrained eval, retrain, retrain with a
              reduced action space, and a from-scratch reference run
  linkbudget  per-SF sensitivity and maximum decodable range
  validate    run the standalone constraint validator on an allocation JSON

Every run writes a manifest with the config hash and artifact paths; CSVs
are deterministic given the same config and seeds.
"""

import argparse
import csv
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, channel as ch, network as net, phy, ppo
from .config import (ConfigError, ExperimentConfig, RunManifest, config_hash,
                     atomic_write_json, load_config)
from .env import LoRaAllocEnv, decode_action


class NoSolutionError(RuntimeError):
    """The link budget cannot be closed at any distance."""


def _fmt(value) -> str:
    """CSV cell formatting; floats use repr so values round-trip exactly."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> str:
    """Write rows (sequences) under a header; returns the schema string."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return ",".join(header)


CURVE_HEADER = ("episode", "reward", "accuracy")


def write_curve(path, curve) -> str:
    return write_csv(path, CURVE_HEADER,
                     [(p.episode, p.reward, p.accuracy) for p in curve])


def make_env(cfg: ExperimentConfig, gateway=None, seed=None) -> LoRaAllocEnv:
    s = cfg.scenario
    return LoRaAllocEnv(
        n_eds=s.n_eds,
        area_m=s.area_m,
        gateway=gateway if gateway is not None else s.gateway,
        phy_cfg=cfg.phy,
        ch_cfg=cfg.channel,
        rho_max=cfg.network.rho_max,
        circuit_power_mw=cfg.network.circuit_power_mw,
        seed=seed if seed is not None else s.seeds[0],
        reward_mode=s.reward_mode,
        service_order=s.service_order,
        deterministic_shadowing=s.deterministic_shadowing,
    )


def _progress_printer(every: int, label: str):
    def cb(point):
        if (point.episode + 1) % every == 0:
            print("%s episode %d: reward %.1f, accuracy %.3f"
                  % (label, point.episode + 1, point.reward, point.accuracy))
    return cb


ACTION_DIST_EPISODES = 100


def _write_action_dist(path, dist) -> str:
    rows = []
    for a in range(len(dist)):
        sf, tp = decode_action(a)
        rows.append((a, sf, tp, dist[a]))
    return write_csv(path, ("action", "sf", "tp_dbm", "probability"), rows)


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    n = cfg.scenario.n_eds
    seed = cfg.scenario.seeds[0]
    manifest = RunManifest("train", config_hash(cfg))
    env = make_env(cfg, seed=seed)
    t0 = time.perf_counter()
    result = ppo.train(env, cfg.ppo, cfg.scenario.episodes, seed=seed,
                       progress=_progress_printer(200, "train"))
    manifest.timings_s["train"] = round(time.perf_counter() - t0, 3)

    curve_path = out / ("train_curve_n%d.csv" % n)
    schema = write_curve(curve_path, result.curve)
    manifest.add_artifact("curve", curve_path, schema)

    ckpt_path = out / ("checkpoint_n%d.json" % n)
    ppo.save_checkpoint(ckpt_path, result.params, cfg.ppo, n,
                        result.episodes_trained)
    manifest.add_artifact("checkpoint", ckpt_path)

    dist_env = make_env(cfg, seed=seed + 1)
    dist = ppo.action_distribution(dist_env, result.params,
                                   ACTION_DIST_EPISODES)
    dist_path = out / ("action_dist_n%d.csv" % n)
    schema = _write_action_dist(dist_path, dist)
    manifest.add_artifact("action_distribution", dist_path, schema)

    manifest.write(out / ("manifest_train_n%d.json" % n))
    print("trained %d episodes; final reward %.1f"
          % (result.episodes_trained, result.curve[-1].reward))
    return manifest.artifacts


def _allocator_stats(alloc, topo, cfg) -> tuple:
    ee = net.energy_efficiency(alloc, topo, cfg.phy, cfg.channel)
    accuracy = float(alloc.assigned.sum()) / alloc.n
    return ee, accuracy


def _dump_json(path, obj) -> None:
    atomic_write_json(path, obj)


def _dump_text(path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


def cmd_compare(cfg: ExperimentConfig, checkpoint: str, out: Path,
                dump_allocations: bool = False) -> dict:
    n = cfg.scenario.n_eds
    ckpt = ppo.load_checkpoint(checkpoint)
    if ckpt.n_eds != n:
        raise ppo.CheckpointMismatchError(
            "checkpoint was trained for %d EDs, config says %d"
            % (ckpt.n_eds, n))
    manifest = RunManifest("compare", config_hash(cfg))
    seeds = list(cfg.scenario.seeds)
    env = make_env(cfg)
    per_scheme = {}

    def record(scheme, seed, ee, accuracy, alloc=None, topo=None):
        per_scheme.setdefault(scheme, []).append((ee, accuracy))
        if dump_allocations and alloc is not None:
            p = out / ("allocation_%s_seed%d.json" % (scheme, seed))
            _dump_text(p, alloc.to_json(topo, cfg.phy, cfg.channel))

    t0 = time.perf_counter()
    for s in seeds:
        r = ppo.rollout(env, ckpt.params, seed=s, greedy=True)
        record("drl", s, r["ee"], r["accuracy"], r["allocation"], r["topology"])
        topo = net.generate_topology(
            n, cfg.scenario.area_m, cfg.scenario.gateway, s, cfg.channel,
            deterministic=cfg.scenario.deterministic_shadowing)
        if dump_allocations:
            _dump_text(out / ("topology_seed%d.json" % s), topo.to_json())
        losses = net.path_losses(topo, cfg.channel)
        kw = dict(phy_cfg=cfg.phy, ch_cfg=cfg.channel,
                  rho_max=cfg.network.rho_max,
                  circuit_power_mw=cfg.network.circuit_power_mw)
        alloc = baselines.random_allocate(topo, seed=s, path_loss_db=losses,
                                          **kw)
        record("random", s, *_allocator_stats(alloc, topo, cfg), alloc, topo)
        alloc = baselines.distance_allocate(topo, cfg.phy, cfg.channel,
                                            cfg.network.rho_max,
                                            cfg.network.circuit_power_mw)
        record("distance", s, *_allocator_stats(alloc, topo, cfg), alloc, topo)
        ga_cfg = dataclasses.replace(cfg.ga, seed=cfg.ga.seed * 1000003 + s)
        try:
            alloc = baselines.ga_allocate(topo, ga_cfg, path_loss_db=losses,
                                          **kw)
            record("ga", s, *_allocator_stats(alloc, topo, cfg), alloc, topo)
        except baselines.NoFeasibleIndividualError:
            per_scheme.setdefault("ga_failures", []).append((s, 0.0))
        if n <= baselines.BRUTE_FORCE_MAX_EDS:
            alloc = baselines.brute_force_allocate(topo, path_loss_db=losses,
                                                   **kw)
            record("brute_force", s, *_allocator_stats(alloc, topo, cfg),
                   alloc, topo)
    manifest.timings_s["compare"] = round(time.perf_counter() - t0, 3)

    rows = []
    order = ["drl", "random", "distance", "ga", "brute_force"]
    for scheme in order:
        stats = per_scheme.get(scheme)
        if not stats:
            continue
        ee = np.array([x[0] for x in stats])
        acc = np.array([x[1] for x in stats])
        failures = len(per_scheme.get("%s_failures" % scheme, []))
        rows.append((scheme, len(stats), float(ee.mean()),
                     float(ee.std()), float(acc.mean()), failures))
    table_path = out / ("compare_n%d.csv" % n)
    schema = write_csv(table_path, ("scheme", "episodes", "mean_ee", "std_ee",
                                    "mean_accuracy", "failures"), rows)
    manifest.add_artifact("comparison", table_path, schema)
    manifest.write(out / ("manifest_compare_n%d.json" % n))
    for row in rows:
        print("%-12s mean EE %12.1f  accuracy %.3f" % (row[0], row[2], row[4]))
    return manifest.artifacts


ASR_DIST_EPISODES = 100
ASR_THRESHOLD = 1e-3


def cmd_asr(cfg: ExperimentConfig, checkpoint: str, out: Path) -> dict:
    n = cfg.scenario.n_eds
    ckpt = ppo.load_checkpoint(checkpoint)
    if ckpt.n_eds != n:
        raise ppo.CheckpointMismatchError(
            "checkpoint was trained for %d EDs, config says %d"
            % (ckpt.n_eds, n))
    manifest = RunManifest("asr", config_hash(cfg))
    seed = cfg.scenario.seeds[0]
    episodes = cfg.scenario.episodes
    moved = cfg.scenario.moved_gateway

    # action mask from the pretrained agent's own behavior (original scenario)
    dist_env = make_env(cfg, seed=seed + 1)
    dist = ppo.action_distribution(dist_env, ckpt.params, ASR_DIST_EPISODES)
    mask = ppo.reduce_action_space(dist, ASR_THRESHOLD)
    mask_path = out / ("asr_mask_n%d.json" % n)
    _dump_json(mask_path, {
        "threshold": ASR_THRESHOLD,
        "distribution": dist.tolist(),
        "mask": mask.tolist(),
        "surviving_actions": int(mask.sum()),
    })
    manifest.add_artifact("mask", mask_path)

    # pretrained agent evaluated on the relocated gateway, no learning
    t0 = time.perf_counter()
    eval_env = make_env(cfg, gateway=moved, seed=seed)
    pre_curve = []
    for ep in range(episodes):
        r = ppo.rollout(eval_env, ckpt.params, greedy=True)
        pre_curve.append(ppo.CurvePoint(ep, r["reward"], r["accuracy"]))
    manifest.timings_s["pretrained_eval"] = round(time.perf_counter() - t0, 3)

    runs = {}
    specs = [
        ("retrain", ckpt.params, None),
        ("retrain_asr", ckpt.params, mask),
        ("scratch", None, None),
    ]
    for name, initial, action_mask in specs:
        t0 = time.perf_counter()
        env = make_env(cfg, gateway=moved, seed=seed)
        runs[name] = ppo.train(env, cfg.ppo, episodes, initial=initial,
                               action_mask=action_mask, seed=seed,
                               progress=_progress_printer(500, name))
        manifest.timings_s[name] = round(time.perf_counter() - t0, 3)

    curves = {"pretrained": pre_curve}
    curves.update({name: runs[name].curve for name, _, _ in specs})
    for name, curve in curves.items():
        path = out / ("asr_%s_curve_n%d.csv" % (name, n))
        schema = write_curve(path, curve)
        manifest.add_artifact("curve_%s" % name, path, schema)

    # final greedy evaluation of every scheme on shared topologies; the
    # pretrained agent is scored both on its own scenario and the new one
    rows = []
    eval_seeds = list(cfg.scenario.seeds)
    scheme_params = [("trained0", 0, ckpt.params, None, None),
                     ("pretrained", 1, ckpt.params, None, moved)]
    scheme_params += [(name, 1, runs[name].params, m, moved)
                      for name, _, m in specs]
    for name, scenario, params, m, gateway in scheme_params:
        env = make_env(cfg, gateway=gateway)
        stats = ppo.evaluate(env, params, eval_seeds, greedy=True,
                             action_mask=m)
        ee = np.array([x["ee"] for x in stats])
        acc = np.array([x["accuracy"] for x in stats])
        rows.append((name, scenario, len(stats), float(ee.mean()),
                     float(ee.std()), float(acc.mean())))
    summary_path = out / ("asr_summary_n%d.csv" % n)
    schema = write_csv(summary_path, ("scheme", "scenario", "episodes",
                                      "mean_ee", "std_ee", "mean_accuracy"),
                       rows)
    manifest.add_artifact("summary", summary_path, schema)
    manifest.write(out / ("manifest_asr_n%d.json" % n))
    for row in rows:
        print("%-12s scenario %d  mean EE %12.1f  accuracy %.3f"
              % (row[0], row[1], row[3], row[5]))
    return manifest.artifacts


def max_decodable_range(sf: int, tp_dbm: float, altitude_m: float,
                        phy_cfg=phy.DEFAULT_PHY, ch_cfg=ch.DEFAULT_CHANNEL,
                        tol_m: float = 0.1) -> tuple:
    """Largest ground distance (and its slant range) still meeting the
    sensitivity of `sf` at transmit power `tp_dbm`, under zero shadowing.

    Bisects the RSSI-sensitivity margin over the ground distance to tol_m.
    """
    if altitude_m <= 0:
        raise ValueError("gateway altitude must be positive")
    target = phy.sensitivity(sf, phy_cfg)
    gw = ch.Position3D(0.0, 0.0, altitude_m)

    def margin(ground_m: float) -> float:
        ed = ch.Position3D(ground_m, 0.0, 0.0)
        loss = ch.a2g_path_loss(ed, gw, ch_cfg, ch.NO_SHADOWING)
        return ch.rssi(tp_dbm, loss) - target

    if margin(0.0) < 0.0:
        raise NoSolutionError(
            "SF%d undecodable at %g dBm even directly below the gateway"
            % (sf, tp_dbm))
    lo, hi = 0.0, altitude_m
    while margin(hi) >= 0.0:
        lo, hi = hi, hi * 2.0
        if hi > 1e12:
            raise NoSolutionError("no finite range bound found")
    while hi - lo > tol_m:
        mid = 0.5 * (lo + hi)
        if margin(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
    ground = 0.5 * (lo + hi)
    return ground, float(np.hypot(ground, altitude_m))


def cmd_linkbudget(cfg: ExperimentConfig, out: Path, tp_dbm=None) -> dict:
    manifest = RunManifest("linkbudget", config_hash(cfg))
    if tp_dbm is None:
        tp_dbm = cfg.phy.max_tp_dbm
    altitude = cfg.scenario.gateway.z
    rows = []
    for sf in phy.SPREADING_FACTORS:
        ground, slant = max_decodable_range(sf, tp_dbm, altitude, cfg.phy,
                                            cfg.channel)
        rows.append((sf, phy.snr_limit(sf, cfg.phy),
                     phy.sensitivity(sf, cfg.phy),
                     phy.lora_data_rate(sf, cfg.phy), ground, slant))
    path = out / "linkbudget.csv"
    schema = write_csv(path, ("sf", "snr_limit_db", "sensitivity_dbm",
                              "data_rate_bps", "max_ground_range_m",
                              "max_slant_range_m"), rows)
    manifest.add_artifact("linkbudget", path, schema)
    manifest.write(out / "manifest_linkbudget.json")
    for row in rows:
        print("SF%-2d sensitivity %.2f dBm  range %.1f m" % (row[0], row[2],
                                                             row[4]))
    return manifest.artifacts


def cmd_validate(cfg: ExperimentConfig, topology_path: str,
                 allocation_path: str, out: Path) -> dict:
    manifest = RunManifest("validate", config_hash(cfg))
    with open(topology_path) as fh:
        topo = net.Topology.from_json(fh.read())
    with open(allocation_path) as fh:
        alloc = net.AllocationState.from_json(fh.read())
    violations = net.validate_allocation(alloc, topo, cfg.phy, cfg.channel,
                                         cfg.network.rho_max)
    report_path = out / "validation_report.json"
    _dump_json(report_path, {
        "topology": str(topology_path),
        "allocation": str(allocation_path),
        "valid": not violations,
        "violations": violations,
    })
    manifest.add_artifact("report", report_path)
    manifest.write(out / "manifest_validate.json")
    if violations:
        print("INVALID: %d violation(s)" % len(violations))
        for v in violations:
            print("  -", v)
    else:
        print("valid allocation")
    return manifest.artifacts


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    scenario = cfg.scenario
    updates = {}
    if getattr(args, "n_eds", None) is not None:
        updates["n_eds"] = args.n_eds
    if getattr(args, "episodes", None) is not None:
        updates["episodes"] = args.episodes
    if getattr(args, "seeds", None):
        updates["seeds"] = tuple(args.seeds)
    if updates:
        scenario = dataclasses.replace(scenario, **updates)
        cfg = dataclasses.replace(cfg, scenario=scenario)
    if getattr(args, "output_dir", None) is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.output_dir)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flyora",
        description="SF/TP allocation experiments for a UAV-served LoRa network")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--n-eds", type=int, dest="n_eds")
        p.add_argument("--episodes", type=int)
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--output-dir", dest="output_dir")

    p = sub.add_parser("train", help="train an agent")
    common(p)

    p = sub.add_parser("compare", help="compare agent vs baselines")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dump-allocations", action="store_true")

    p = sub.add_parser("asr", help="relocated-gateway retraining study")
    common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("linkbudget", help="per-SF sensitivity and max range")
    common(p)
    p.add_argument("--tp-dbm", type=float, dest="tp_dbm")

    p = sub.add_parser("validate", help="validate an allocation JSON")
    common(p)
    p.add_argument("--topology", required=True)
    p.add_argument("--allocation", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        cfg = _apply_overrides(cfg, args)
        out = Path(cfg.resolved_output_dir())
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "compare":
            cmd_compare(cfg, args.checkpoint, out, args.dump_allocations)
        elif args.command == "asr":
            cmd_asr(cfg, args.checkpoint, out)
        elif args.command == "linkbudget":
            cmd_linkbudget(cfg, out, args.tp_dbm)
        elif args.command == "validate":
            cmd_validate(cfg, args.topology, args.allocation, out)
    except (ConfigError, NoSolutionError, ppo.CheckpointMismatchError,
            baselines.TooManyEdsError, baselines.InstanceTooLargeError,
            OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
