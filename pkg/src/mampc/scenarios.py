"""Scenario pipeline: config -> plant -> MPC -> LQR -> dataset -> policy ->
hybrid context -> closed-loop runs -> timing -> artifacts.

The four built-in scenarios mirror the benchmark campaign: a standard hybrid
on the pendulum and bicopter, alternating authority on the (chaotic) triple
pendulum, and the way-point variant on the (slow) quadcopter. Paper-fixed
quantities (bounds, radii, horizons, initial conditions, sampling boxes) sit
next to values the source never published (weights, training budgets); the
latter are ordinary config entries and are flagged in the comments of the
shipped TOML files.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, bench, hybrid, lqr as lqr_mod, mpc as mpc_mod
from .config import SCHEMA_VERSION, validate_config
from .plants import Plant, builtin_plant
from .policy_nn import (
    LossCurve,
    MLPPolicy,
    TrainConfig,
    load_policy,
    sample_dataset,
    train_imitation,
)
from .sets import Box, NormBall

_PI = np.pi

# Built-in scenario configs. Sampling boxes for the triple pendulum are
# widened beyond the paper's ranges: the closed loop provably visits joint
# rates ~2.7 rad/s from the benchmark initial condition, and a surrogate
# trained only on |rate| <= 1 destabilizes the chaotic plant.
BUILTIN_SCENARIOS = {
    "pendulum": {
        "schema_version": SCHEMA_VERSION,
        "run": {"plant": "pendulum", "variant": "standard",
                "x0": [_PI / 2, 0.5], "seed": 0},
        "mpc": {"horizon": 5, "q_diag": [1.0, 1.0], "r_diag": [1.0]},
        "lqr": {"roa_radius": 0.5},
        "nn": {"layer_sizes": [2, 20, 20, 1], "dataset_size": 10000,
               "sampling_lower": [-_PI, -1.0], "sampling_upper": [_PI, 1.0]},
        "hybrid": {"n_lqr": 5},
        "bench": {"lookup_pts_per_dim": 41,
                  "lookup_lower": [-_PI, -3.0], "lookup_upper": [_PI, 3.0]},
    },
    "triple_pendulum": {
        "schema_version": SCHEMA_VERSION,
        "run": {"plant": "triple_pendulum", "variant": "alternating_authority",
                "x0": [_PI / 6, 1.0, _PI / 6, 1.0, _PI / 6, 1.0], "seed": 0},
        "mpc": {"horizon": 5, "q_diag": [1.0] * 6, "r_diag": [0.01] * 3},
        "lqr": {"roa_radius": 0.4},
        "nn": {"layer_sizes": [6, 50, 50, 50, 3], "dataset_size": 12000,
               "epochs": 400,
               "sampling_lower": [-0.7, -3.0] * 3, "sampling_upper": [0.7, 3.0] * 3},
        "hybrid": {"n_lqr": 5, "i_d": 2},
        "bench": {},
    },
    "bicopter": {
        "schema_version": SCHEMA_VERSION,
        "run": {"plant": "bicopter", "variant": "standard",
                "x0": [_PI / 2, 1.0, _PI / 2, 1.0, _PI / 2, 1.0], "seed": 0},
        "mpc": {"horizon": 20, "q_diag": [1.0] * 6, "r_diag": [0.1] * 2},
        "lqr": {"roa_radius": 0.5},
        "nn": {"layer_sizes": [6, 50, 50, 50, 2], "dataset_size": 4000,
               "epochs": 200,
               "sampling_lower": [-_PI / 2, -1.0] * 3,
               "sampling_upper": [_PI / 2, 1.0] * 3},
        "hybrid": {"n_lqr": 10},
        "bench": {},
    },
    "quadcopter": {
        "schema_version": SCHEMA_VERSION,
        "run": {"plant": "quadcopter", "variant": "way_point",
                "x0": [0.5, 0.1, 0.5, 0.1, 0.5, 0.1,
                       _PI / 6, 0.1, _PI / 6, 0.1, _PI / 4, 0.1],
                "seed": 0},
        "mpc": {"horizon": 20, "q_diag": [1.0] * 12, "r_diag": [1e-4] * 4},
        "lqr": {"roa_radius": 0.5},
        "nn": {"layer_sizes": [12, 60, 60, 60, 60, 4], "dataset_size": 4000,
               "epochs": 200,
               "sampling_lower": [-0.5, -0.1] * 3 + [-_PI / 6, -0.1, -_PI / 6, -0.1, -_PI / 4, -0.1],
               "sampling_upper": [0.5, 0.1] * 3 + [_PI / 6, 0.1, _PI / 6, 0.1, _PI / 4, 0.1]},
        "hybrid": {"n_lqr": 10, "wp_radius": 2.0, "n_wp": 10},
        "bench": {},
    },
}


def builtin_scenario(name: str) -> dict:
    if name not in BUILTIN_SCENARIOS:
        raise ValueError(f"unknown scenario '{name}'; choices: {sorted(BUILTIN_SCENARIOS)}")
    return validate_config(json.loads(json.dumps(BUILTIN_SCENARIOS[name])))


@dataclass
class ScenarioBundle:
    """Everything a configured scenario builds, stage by stage."""

    cfg: dict
    plant: Plant
    spec: mpc_mod.MPCSpec
    lqr: lqr_mod.LQRSolution
    policy: MLPPolicy | None = None
    curve: LossCurve | None = None
    ctx: hybrid.HybridContext | None = None
    roa_report: lqr_mod.RoAValidation | None = None
    timings: dict = field(default_factory=dict)

    @property
    def x0(self) -> np.ndarray:
        return np.array(self.cfg["run"]["x0"], dtype=float)


def make_plant(cfg: dict) -> Plant:
    return builtin_plant(cfg["run"]["plant"], **cfg.get("plant", {}))


def make_spec(cfg: dict, plant: Plant) -> mpc_mod.MPCSpec:
    m = cfg["mpc"]
    state_box = None
    if "state_box_lower" in m and "state_box_upper" in m:
        state_box = Box(m["state_box_lower"], m["state_box_upper"])
    ball = NormBall(m["terminal_ball_radius"]) if "terminal_ball_radius" in m else None
    return mpc_mod.make_mpc_spec(
        plant, N=m["horizon"], Q=np.diag(m["q_diag"]), R=np.diag(m["r_diag"]),
        state_box=state_box, terminal_ball=ball,
    )


def make_lqr(cfg: dict, spec: mpc_mod.MPCSpec) -> lqr_mod.LQRSolution:
    return lqr_mod.build_lqr(spec.A_d, spec.B_d, spec.Q, spec.R,
                             roa_radius=cfg["lqr"]["roa_radius"])


def sampling_box(cfg: dict) -> Box:
    return Box(cfg["nn"]["sampling_lower"], cfg["nn"]["sampling_upper"])


def layer_sizes(cfg: dict, plant: Plant) -> list:
    sizes = [int(s) for s in cfg["nn"]["layer_sizes"]]
    if "hidden" in cfg["nn"]:
        width = int(cfg["nn"]["hidden"])
        sizes = [plant.n] + [width] * max(1, len(sizes) - 2) + [plant.m]
    return sizes


def train_policy(cfg: dict, plant: Plant, spec: mpc_mod.MPCSpec):
    nn = cfg["nn"]
    ctrl = mpc_mod.MPCController(spec)
    data = sample_dataset(ctrl, plant, sampling_box(cfg), M=nn["dataset_size"],
                          seed=cfg["run"]["seed"])
    tc = TrainConfig(
        epochs=nn["epochs"], batch_size=nn["batch_size"],
        learning_rate=nn["learning_rate"],
        adam_betas=(nn["adam_beta1"], nn["adam_beta2"]),
        adam_eps=nn["adam_eps"], seed=cfg["run"]["seed"],
    )
    return train_imitation(data, layer_sizes(cfg, plant), tc, output_box=plant.input_box)


def make_context(cfg: dict, plant: Plant, spec: mpc_mod.MPCSpec,
                 sol: lqr_mod.LQRSolution, policy: MLPPolicy) -> hybrid.HybridContext:
    h = cfg["hybrid"]
    mcfg = hybrid.MAMPCConfig(
        variant=cfg["run"]["variant"],
        n_lqr=h["n_lqr"],
        i_d=h["i_d"],
        wp_ball=NormBall(h["wp_radius"]) if h["wp_radius"] > 0 else None,
        n_wp=h["n_wp"] if h["n_wp"] > 0 else None,
        erosion_delta=h["erosion_delta"],
    )
    return hybrid.HybridContext(plant, mpc_mod.MPCController(spec), sol, policy, mcfg)


def build_bundle(cfg: dict, policy_path=None) -> ScenarioBundle:
    """Run the build stages: linearize, LQR, dataset+train (or load), assemble."""
    plant = make_plant(cfg)
    spec = make_spec(cfg, plant)
    sol = make_lqr(cfg, spec)
    bundle = ScenarioBundle(cfg=cfg, plant=plant, spec=spec, lqr=sol)
    if policy_path is not None:
        bundle.policy = load_policy(policy_path)
    else:
        bundle.policy, bundle.curve = train_policy(cfg, plant, spec)
    bundle.ctx = make_context(cfg, plant, spec, sol, bundle.policy)
    return bundle


def validate_roa(cfg: dict, bundle: ScenarioBundle) -> lqr_mod.RoAValidation:
    rep = lqr_mod.validate_roa_ball(
        bundle.plant, bundle.lqr.K, cfg["lqr"]["roa_radius"],
        n_samples=cfg["lqr"]["validate_samples"],
        horizon=cfg["lqr"]["validate_horizon"],
        seed=cfg["run"]["seed"],
    )
    bundle.roa_report = rep
    return rep


def simulate_mampc(cfg: dict, bundle: ScenarioBundle) -> bench.SimReport:
    ctrl = bench.MAMPCController(bundle.ctx)
    ctrl.reset()
    return bench.simulate(ctrl, bundle.plant, bundle.x0,
                          max_steps=cfg["run"]["max_steps"], tol=cfg["run"]["tol"])


def simulate_implicit(cfg: dict, bundle: ScenarioBundle) -> bench.SimReport:
    ctrl = bench.ImplicitMPC(mpc_mod.MPCController(bundle.spec), bundle.plant)
    return bench.simulate(ctrl, bundle.plant, bundle.x0,
                          max_steps=cfg["run"]["max_steps"], tol=cfg["run"]["tol"])


def time_scenario(cfg: dict, bundle: ScenarioBundle, repeats: int | None = None):
    """Timed closed-loop runs for the hybrid and the implicit baseline."""
    reps = repeats if repeats is not None else cfg["bench"]["repeats"]
    run = cfg["run"]
    mampc_ctrl = bench.MAMPCController(bundle.ctx)
    stats_m, rep_m = bench.time_controller(
        mampc_ctrl, bundle.plant, bundle.x0, repeats=reps,
        max_steps=run["max_steps"], tol=run["tol"])
    imp_ctrl = bench.ImplicitMPC(mpc_mod.MPCController(bundle.spec), bundle.plant)
    stats_i, rep_i = bench.time_controller(
        imp_ctrl, bundle.plant, bundle.x0, repeats=reps,
        max_steps=run["max_steps"], tol=run["tol"])
    bundle.timings = {"mampc": (stats_m, rep_m), "implicit": (stats_i, rep_i)}
    return bundle.timings


def manifest_dict(cfg: dict, bundle: ScenarioBundle, results: dict) -> dict:
    return {
        "generator": f"mampc {__version__}",
        "created_unix": int(time.time()),
        "schema_version": SCHEMA_VERSION,
        "config": json.loads(json.dumps(cfg)),
        "results": results,
    }


def write_manifest(path, cfg: dict, bundle: ScenarioBundle, results: dict):
    Path(path).write_text(json.dumps(manifest_dict(cfg, bundle, results), indent=2,
                                     sort_keys=True))
