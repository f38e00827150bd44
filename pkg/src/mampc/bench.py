"""Closed-loop simulation, controller-latency measurement, and baselines.

Timing wraps the controller call only (monotonic nanoseconds, plant stepping
excluded), repeats the identical run, takes per-step medians across repeats
and drops the first step, then aggregates per-mode statistics and up-time
divisions: percentage of wall time and of control steps spent in each mode.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import plants as _plants
from .hybrid import (
    MODE_MPC,
    HybridContext,
    MPCInfeasibleError,
    ModeDecision,
    dispatch,
)
from .mpc import MPCController
from .plants import Plant
from .sets import Box

TERM_CONVERGED = "converged"
TERM_MAX_STEPS = "max_steps"
TERM_INFEASIBLE = "infeasible"
TERM_BLOW_UP = "blow_up"

LATTICE_CAP = 10_000_000


@dataclass
class SimReport:
    """Trajectory, inputs, mode tags and per-step controller latency."""

    trajectory: np.ndarray      # (steps+1, n)
    inputs: np.ndarray          # (steps, m)
    modes: list
    per_step_ns: list
    terminated: str
    steps: int

    def mode_set(self):
        return sorted(set(self.modes))


@dataclass
class ModeTiming:
    mode: str
    count: int
    mean_ns: float
    std_ns: float
    median_ns: float
    time_div_pct: float
    step_div_pct: float


@dataclass
class TimingStats:
    per_mode: dict
    total_ns: float
    n_steps: int
    repeats: int = 1

    def rows(self):
        """timing.csv rows: mode, mean_ns, std_ns, median_ns, time_div_pct, step_div_pct."""
        return [
            (m.mode, m.mean_ns, m.std_ns, m.median_ns, m.time_div_pct, m.step_div_pct)
            for m in self.per_mode.values()
        ]

    def median(self, mode: str) -> float:
        return self.per_mode[mode].median_ns

    def time_div(self, mode: str) -> float:
        return self.per_mode[mode].time_div_pct

    def step_div(self, mode: str) -> float:
        return self.per_mode[mode].step_div_pct


# ---------------------------------------------------------------------------
# Controller adapters: anything callable as (x, i) -> ModeDecision simulates.
# ---------------------------------------------------------------------------

class MAMPCController:
    """Dispatch adapter for an assembled hybrid context."""

    def __init__(self, ctx: HybridContext):
        self.ctx = ctx

    def __call__(self, x, i: int) -> ModeDecision:
        return dispatch(self.ctx, x, i)

    def reset(self):
        self.ctx.mpc.reset()


class ImplicitMPC:
    """Plain receding-horizon MPC; every step is tagged MPC."""

    def __init__(self, ctrl: MPCController, plant: Plant):
        self.ctrl = ctrl
        self.plant = plant

    def __call__(self, x, i: int) -> ModeDecision:
        res = self.ctrl.control(x)
        if res.status == "infeasible":
            raise MPCInfeasibleError(f"implicit MPC infeasible at x={x}")
        return ModeDecision(MODE_MPC, self.plant.input_box.clamp(res.u0))

    def reset(self):
        self.ctrl.reset()


class ConstantController:
    """Fixed decision every step; timing-floor baseline."""

    def __init__(self, u, mode: str = "CONST"):
        self.decision = ModeDecision(mode, np.asarray(u, dtype=float))

    def __call__(self, x, i: int) -> ModeDecision:
        return self.decision

    def reset(self):
        pass


@dataclass
class LookupPolicy:
    """Grid-sampled MPC law with multilinear interpolation (explicit-MPC stand-in)."""

    axes: tuple
    values: np.ndarray          # lattice of precomputed moves, shape (*pts, m)
    box: Box
    input_box: Box
    interpolator: RegularGridInterpolator = field(repr=False, default=None)

    def __post_init__(self):
        if self.interpolator is None:
            self.interpolator = RegularGridInterpolator(
                self.axes, self.values, method="linear",
                bounds_error=False, fill_value=None)

    def __call__(self, x) -> np.ndarray:
        q = self.box.clamp(x)
        return self.input_box.clamp(self.interpolator(q)[0])


class LookupController:
    def __init__(self, policy: LookupPolicy, mode: str = "LOOKUP"):
        self.policy = policy
        self.mode = mode

    def __call__(self, x, i: int) -> ModeDecision:
        return ModeDecision(self.mode, self.policy(x))

    def reset(self):
        pass


def build_lookup_baseline(ctrl: MPCController, plant: Plant, box: Box,
                          pts_per_dim: int) -> LookupPolicy:
    """Precompute the MPC move on a regular lattice over ``box``.

    Queries interpolate multilinearly and clamp to the input box. Lattice
    size is capped; infeasible nodes store the controller's clamped
    fallback move (they sit outside the operating region of the baseline).
    """
    if pts_per_dim < 2:
        raise ValueError("need at least 2 lattice points per dimension")
    if not box.is_bounded():
        raise ValueError("lattice box must be bounded")
    n = box.dim
    total = pts_per_dim ** n
    if total > LATTICE_CAP:
        raise ValueError(f"lattice of {total} points exceeds cap {LATTICE_CAP}")
    axes = tuple(np.linspace(box.lower[j], box.upper[j], pts_per_dim) for j in range(n))
    values = np.empty((total, plant.m))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    for idx, x in enumerate(mesh):
        res = ctrl.control(x, warm=True)
        values[idx] = plant.input_box.clamp(res.u0)
    values = values.reshape(*(pts_per_dim,) * n, plant.m)
    return LookupPolicy(axes=axes, values=values, box=box, input_box=plant.input_box)


# ---------------------------------------------------------------------------
# Closed-loop simulation and timing
# ---------------------------------------------------------------------------

def simulate(controller, plant: Plant, x0, max_steps: int = 600,
             tol: float = 0.01) -> SimReport:
    """Step the true plant under the controller until convergence
    (||x - x_eq|| <= tol), the step cap, infeasibility, or blow-up.

    Wall time per control step is recorded around the controller call only.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    x = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    traj = [x.copy()]
    inputs = []
    modes = []
    ns = []
    terminated = TERM_MAX_STEPS
    for i in range(max_steps):
        if np.linalg.norm(x - plant.x_eq) <= tol:
            terminated = TERM_CONVERGED
            break
        try:
            t0 = time.perf_counter_ns()
            dec = controller(x, i)
            t1 = time.perf_counter_ns()
        except MPCInfeasibleError:
            terminated = TERM_INFEASIBLE
            break
        try:
            x = _plants.step(plant, x, dec.u)
        except _plants.IntegrationBlowUp:
            terminated = TERM_BLOW_UP
            break
        traj.append(x.copy())
        inputs.append(np.asarray(dec.u, dtype=float))
        modes.append(dec.mode)
        ns.append(t1 - t0)
    else:
        if np.linalg.norm(x - plant.x_eq) <= tol:
            terminated = TERM_CONVERGED
    steps = len(modes)
    m = plant.m
    return SimReport(
        trajectory=np.array(traj),
        inputs=np.array(inputs).reshape(steps, m),
        modes=modes,
        per_step_ns=ns,
        terminated=terminated,
        steps=steps,
    )


def _aggregate(modes, step_ns, repeats: int) -> TimingStats:
    step_ns = np.asarray(step_ns, dtype=float)
    total = float(step_ns.sum())
    per_mode = {}
    n = len(modes)
    for mode in sorted(set(modes)):
        sel = np.array([m == mode for m in modes])
        times = step_ns[sel]
        per_mode[mode] = ModeTiming(
            mode=mode,
            count=int(sel.sum()),
            mean_ns=float(times.mean()),
            std_ns=float(times.std()),
            median_ns=float(np.median(times)),
            time_div_pct=100.0 * float(times.sum()) / total if total else 0.0,
            step_div_pct=100.0 * float(sel.sum()) / n if n else 0.0,
        )
    return TimingStats(per_mode=per_mode, total_ns=total, n_steps=n, repeats=repeats)


def uptime_division(report: SimReport) -> TimingStats:
    """Per-mode percentages of wall time and of control steps for one run."""
    if report.steps == 0:
        raise ValueError("report has no control steps")
    return _aggregate(report.modes, report.per_step_ns, repeats=1)


def time_controller(controller, plant: Plant, x0, repeats: int = 50,
                    max_steps: int = 600, tol: float = 0.01,
                    drop_first: bool = True) -> tuple[TimingStats, SimReport]:
    """Repeat the identical closed-loop run, take per-step medians across
    repeats, drop the first step, and aggregate per-mode statistics.

    The controller is reset before each repeat; mode sequences must come out
    identical or the scenario is not deterministic and timing is rejected.
    """
    if repeats < 1:
        raise ValueError("need at least one repeat")
    runs = []
    for _ in range(repeats):
        controller.reset()
        runs.append(simulate(controller, plant, x0, max_steps=max_steps, tol=tol))
    ref = runs[0]
    for r in runs[1:]:
        if r.modes != ref.modes:
            raise RuntimeError("mode sequences differ across repeats; "
                               "controller is not deterministic")
    per_step = np.array([r.per_step_ns for r in runs], dtype=float)  # (repeats, steps)
    medians = np.median(per_step, axis=0)
    modes = list(ref.modes)
    if drop_first and len(modes) > 1:
        medians = medians[1:]
        modes = modes[1:]
    if medians.size and float(np.median(medians)) < 100.0:
        warnings.warn("median step below 100 ns; clock resolution may dominate")
    return _aggregate(modes, medians, repeats), ref


def replay_open_loop(report: SimReport, plant: Plant) -> np.ndarray:
    """Re-apply the recorded inputs through the plant; bit-exact by determinism."""
    x = report.trajectory[0].copy()
    out = [x.copy()]
    for k in range(report.steps):
        x = _plants.step(plant, x, report.inputs[k])
        out.append(x.copy())
    return np.array(out)
