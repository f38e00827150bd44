"""Command-line interface.

Subcommands: run (full pipeline), sweep (parameter sweep), validate-roa,
train (dataset + imitation only), time (latency benchmark), report
(re-render figures from CSV artifacts).

Exit codes: 0 success, 1 config/validation failure, 2 runtime failure,
3 acceptance-gate failure (with --gate).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import bench, report as report_mod, scenarios
from .config import ConfigError, apply_override, load_config
from .policy_nn import save_policy

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_GATE = 3

# Gates checked by `run --gate`: scenario-level analogues of the acceptance
# criteria that a single configured run can decide.
GATE_NAMES = ("converged", "step_ratio", "loss_ratio", "mode_ordering", "amortized")

_timing_lock = threading.Lock()


def _echo(msg: str):
    print(msg, flush=True)


def _load(args) -> dict:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["run"]["seed"] = args.seed
    if getattr(args, "repeats", None) is not None:
        cfg["bench"]["repeats"] = args.repeats
    return cfg


def evaluate_gates(results: dict) -> dict:
    """Per-gate pass/fail from a run's summary results."""
    gates = {}
    gates["converged"] = (results["mampc"]["terminated"] == "converged"
                          and results["implicit"]["terminated"] == "converged")
    if gates["converged"]:
        gates["step_ratio"] = (results["mampc"]["steps"]
                               <= 10 * results["implicit"]["steps"])
    else:
        gates["step_ratio"] = False
    lr = results.get("training", {}).get("loss_ratio")
    gates["loss_ratio"] = lr is not None and lr <= 0.1
    med = results.get("timing", {}).get("median_ns", {})
    if all(m in med for m in ("LQR", "NN", "MPC")):
        gates["mode_ordering"] = (5.0 * med["LQR"] <= med["NN"]
                                  and 2.0 * med["NN"] <= med["MPC"])
    else:
        gates["mode_ordering"] = False
    totals = results.get("timing", {})
    gates["amortized"] = (totals.get("mampc_total_ns", np.inf)
                          < totals.get("implicit_total_ns", 0))
    return gates


def _summarize(cfg, bundle, sim_m, sim_i, timings) -> dict:
    stats_m, _ = timings["mampc"]
    stats_i, _ = timings["implicit"]
    results = {
        "mampc": {"terminated": sim_m.terminated, "steps": sim_m.steps},
        "implicit": {"terminated": sim_i.terminated, "steps": sim_i.steps},
        "timing": {
            "mampc_total_ns": stats_m.total_ns,
            "implicit_total_ns": stats_i.total_ns,
            "median_ns": {m: t.median_ns for m, t in stats_m.per_mode.items()},
            "time_div_pct": {m: t.time_div_pct for m, t in stats_m.per_mode.items()},
            "step_div_pct": {m: t.step_div_pct for m, t in stats_m.per_mode.items()},
        },
    }
    if bundle.curve is not None:
        results["training"] = {
            "initial_mse": bundle.curve.train_mse[0],
            "final_mse": bundle.curve.train_mse[-1],
            "loss_ratio": bundle.curve.train_mse[-1] / bundle.curve.train_mse[0],
        }
    if bundle.roa_report is not None:
        results["roa"] = dict(bundle.roa_report.rows())
    return results


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario = cfg["run"]["plant"]
    _echo(f"[run] building scenario '{scenario}' ({cfg['run']['variant']})")
    bundle = scenarios.build_bundle(cfg)
    _echo("[run] validating attraction ball on the true plant")
    roa = scenarios.validate_roa(cfg, bundle)
    _echo(f"[run] roa: passed={roa.passed} worst_excursion={roa.worst_excursion:.4f}")
    _echo("[run] closed-loop simulation")
    sim_m = scenarios.simulate_mampc(cfg, bundle)
    sim_i = scenarios.simulate_implicit(cfg, bundle)
    _echo(f"[run] mampc: {sim_m.terminated} in {sim_m.steps} steps; "
          f"implicit: {sim_i.terminated} in {sim_i.steps} steps")
    _echo(f"[run] timing ({cfg['bench']['repeats']} repeats)")
    with _timing_lock:
        timings = scenarios.time_scenario(cfg, bundle)
    if cfg["bench"]["lookup_pts_per_dim"] >= 2:
        _echo("[run] building grid-lookup baseline")
        lb = cfg["bench"].get("lookup_lower", cfg["nn"]["sampling_lower"])
        ub = cfg["bench"].get("lookup_upper", cfg["nn"]["sampling_upper"])
        from .mpc import MPCController
        from .sets import Box
        policy = bench.build_lookup_baseline(
            MPCController(bundle.spec), bundle.plant, Box(lb, ub),
            cfg["bench"]["lookup_pts_per_dim"])
        with _timing_lock:
            stats_l, rep_l = bench.time_controller(
                bench.LookupController(policy), bundle.plant, bundle.x0,
                repeats=cfg["bench"]["repeats"], max_steps=cfg["run"]["max_steps"],
                tol=cfg["run"]["tol"])
        timings["lookup"] = (stats_l, rep_l)
    results = _summarize(cfg, bundle, sim_m, sim_i, timings)
    report_mod.render_run_artifacts(out, sim_m, timings, bundle.curve, roa,
                                    tol=cfg["run"]["tol"], scenario=scenario)
    scenarios.write_manifest(out / "manifest.json", cfg, bundle, results)
    save_policy(bundle.policy, out / "policy.nnpol")
    _echo(f"[run] artifacts in {out}")
    if args.gate:
        gates = evaluate_gates(results)
        for name in GATE_NAMES:
            _echo(f"[gate] {name}: {'PASS' if gates[name] else 'FAIL'}")
        if not all(gates.values()):
            return EXIT_GATE
    return EXIT_OK


def cmd_validate_roa(args) -> int:
    cfg = _load(args)
    plant = scenarios.make_plant(cfg)
    spec = scenarios.make_spec(cfg, plant)
    sol = scenarios.make_lqr(cfg, spec)
    bundle = scenarios.ScenarioBundle(cfg=cfg, plant=plant, spec=spec, lqr=sol)
    rep = scenarios.validate_roa(cfg, bundle)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_mod.write_roa_csv(out / "roa.csv", rep)
    _echo(f"[validate-roa] passed={rep.passed} radius={rep.radius} "
          f"worst_excursion={rep.worst_excursion:.4f} "
          f"worst_terminal={rep.worst_terminal_norm:.4f}")
    if args.gate and not rep.passed:
        return EXIT_GATE
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    plant = scenarios.make_plant(cfg)
    spec = scenarios.make_spec(cfg, plant)
    _echo(f"[train] dataset size {cfg['nn']['dataset_size']}, "
          f"{cfg['nn']['epochs']} epochs")
    policy, curve = scenarios.train_policy(cfg, plant, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_policy(policy, out / "policy.nnpol")
    report_mod.write_training_csv(out / "training.csv", curve)
    report_mod.plot_training_curve(out / "training_loss.png", curve,
                                   title=cfg["run"]["plant"])
    ratio = curve.train_mse[-1] / curve.train_mse[0]
    _echo(f"[train] final/initial MSE ratio {ratio:.5f}; artifacts in {out}")
    if args.gate and ratio > 0.1:
        return EXIT_GATE
    return EXIT_OK


def cmd_time(args) -> int:
    cfg = _load(args)
    bundle = scenarios.build_bundle(cfg, policy_path=args.policy)
    with _timing_lock:
        timings = scenarios.time_scenario(cfg, bundle)
    stats_m, rep_m = timings["mampc"]
    stats_i, _ = timings["implicit"]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_mod.write_timing_csv(out / "timing.csv", stats_m)
    report_mod.plot_per_step_time(out / "per_step_time.png", rep_m,
                                  title=cfg["run"]["plant"])
    for mode, t in stats_m.per_mode.items():
        _echo(f"[time] {mode}: median {t.median_ns/1e3:.2f} µs "
              f"mean {t.mean_ns/1e3:.2f} ± {t.std_ns/1e3:.2f} µs "
              f"time_div {t.time_div_pct:.1f}% step_div {t.step_div_pct:.1f}%")
    _echo(f"[time] totals: mampc {stats_m.total_ns/1e6:.3f} ms, "
          f"implicit {stats_i.total_ns/1e6:.3f} ms")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out_dir)
    traj_csv = out / "trajectory.csv"
    if not traj_csv.exists():
        raise ConfigError(f"no trajectory.csv in {out}")
    modes, xs, us, ns = report_mod.read_trajectory_csv(traj_csv)
    rep = bench.SimReport(trajectory=np.vstack([xs, xs[-1:]]), inputs=us,
                          modes=modes, per_step_ns=ns, terminated="unknown",
                          steps=len(modes))
    report_mod.plot_per_step_time(out / "per_step_time.png", rep)
    report_mod.plot_trajectory(out / "trajectory.png", rep)
    training_csv = out / "training.csv"
    if training_csv.exists():
        import csv as _csv

        with open(training_csv, newline="") as f:
            rows = list(_csv.reader(f))[1:]
        from .policy_nn import LossCurve
        curve = LossCurve([float(r[1]) for r in rows], [float(r[2]) for r in rows])
        report_mod.plot_training_curve(out / "training_loss.png", curve)
    _echo(f"[report] figures rendered in {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    key, _, values = args.param.partition("=")
    if not values:
        raise ConfigError("--param must be of the form section.key=v1,v2,...")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = int(os.environ.get("MAMPC_THREADS", "1"))

    def one(value: str):
        c = apply_override(cfg, key, value)
        bundle = scenarios.build_bundle(c)
        sim_m = scenarios.simulate_mampc(c, bundle)
        sim_i = scenarios.simulate_implicit(c, bundle)
        with _timing_lock:
            timings = scenarios.time_scenario(c, bundle, repeats=args.repeats or 5)
        res = _summarize(c, bundle, sim_m, sim_i, timings)
        return value, res

    values = values.split(",")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, values))
    else:
        rows = [one(v) for v in values]
    import csv as _csv

    with open(out / "sweep.csv", "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["param", "value", "mampc_terminated", "mampc_steps",
                    "implicit_steps", "loss_ratio", "mampc_total_ns",
                    "implicit_total_ns"])
        for value, res in rows:
            w.writerow([key, value, res["mampc"]["terminated"],
                        res["mampc"]["steps"], res["implicit"]["steps"],
                        res.get("training", {}).get("loss_ratio", ""),
                        res["timing"]["mampc_total_ns"],
                        res["timing"]["implicit_total_ns"]])
    for value, res in rows:
        _echo(f"[sweep] {key}={value}: {res['mampc']['terminated']} "
              f"in {res['mampc']['steps']} steps")
    _echo(f"[sweep] table in {out / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mampc",
        description="Hybrid MPC/NN/LQR controller benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="TOML config (or manifest JSON)")
        p.add_argument("--seed", type=int, default=None, help="override [run].seed")
        p.add_argument("--out-dir", default="out", help="artifact directory")
        p.add_argument("--repeats", type=int, default=None,
                       help="override [bench].repeats (default 50)")
        p.add_argument("--gate", action="store_true",
                       help="exit 3 unless the scenario gates pass")

    p_run = sub.add_parser("run", help="full pipeline: build, validate, simulate, time, report")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="re-run the pipeline over parameter values")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True,
                         help="override spec, e.g. nn.hidden=20,50")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_roa = sub.add_parser("validate-roa", help="sampling-based attraction-ball check")
    common(p_roa)
    p_roa.set_defaults(fn=cmd_validate_roa)

    p_train = sub.add_parser("train", help="sample the dataset and train the policy")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_time = sub.add_parser("time", help="latency benchmark for a built scenario")
    common(p_time)
    p_time.add_argument("--policy", default=None, help="reuse a saved policy blob")
    p_time.set_defaults(fn=cmd_time)

    p_rep = sub.add_parser("report", help="re-render figures from CSV artifacts")
    common(p_rep, needs_config=False)
    p_rep.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
