"""Triple-mode hybrid dispatch: LQR inside its attraction ball, the neural
policy when forward verification certifies it, and the fail-safe MPC
otherwise.

Three variants share the LQR-priority structure:
  * standard: certify the NN by simulating it forward until it enters the
    attraction ball without leaving the stage constraint set;
  * alternating authority (chaotic plants): replace the long forward check
    with a one-step admissibility test plus periodic MPC defaulting;
  * way point (slow plants): verify into an intermediate ball first so
    verification horizons stay short.

Forward verification integrates with forward Euler at the plant sampling
interval (cheap, per-step cost matters here); the accuracy gap against the
RK4 plant truth is absorbed by eroding the target and stage sets, which is
also how bounded model uncertainty is handled (robustify).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import plants as _plants
from .lqr import LQRSolution
from .mpc import MPCController
from .plants import Plant
from .policy_nn import MLPPolicy, mlp_forward
from .sets import Box, NormBall, erode

MODE_LQR = "LQR"
MODE_NN = "NN"
MODE_MPC = "MPC"

VERIFY_NOT_RUN = "not_run"
VERIFY_SUCCESS = "success"
VERIFY_STAGE_VIOLATION = "stage_violation"
VERIFY_HORIZON_EXHAUSTED = "horizon_exhausted"
VERIFY_NONFINITE = "nonfinite"
VERIFY_DISABLED = "nn_disabled"
VERIFY_SKIPPED_DEFAULT = "mpc_defaulting"

STANDARD = "standard"
ALTERNATING = "alternating_authority"
WAY_POINT = "way_point"


class MPCInfeasibleError(Exception):
    """Fail-safe MPC infeasible at runtime; the run cannot continue safely."""


@dataclass(frozen=True)
class MAMPCConfig:
    variant: str = STANDARD
    n_lqr: int = 5
    i_d: int = 1
    wp_ball: NormBall | None = None
    n_wp: int | None = None
    erosion_delta: float = 0.0

    def __post_init__(self):
        if self.variant not in (STANDARD, ALTERNATING, WAY_POINT):
            raise ValueError(f"unknown variant '{self.variant}'")
        if self.n_lqr < 1:
            raise ValueError("verification horizon must be at least 1")
        if self.i_d < 1:
            raise ValueError("MPC-defaulting period must be at least 1")
        if self.erosion_delta < 0:
            raise ValueError("erosion margin must be nonnegative")
        if self.variant == WAY_POINT:
            if self.wp_ball is None or self.n_wp is None:
                raise ValueError("way-point variant needs wp_ball and n_wp")
            if self.n_wp < 1:
                raise ValueError("way-point horizon must be at least 1")


def robustify(cfg: MAMPCConfig, alpha: float) -> MAMPCConfig:
    """Margin the dispatcher against model error bounded by alpha per rollout.

    Sets the erosion applied to the attraction ball and the stage state set
    inside verification. If the eroded ball is empty the NN branch is
    disabled at assembly and the hybrid degrades to dual-mode MPC+LQR.
    """
    if alpha < 0:
        raise ValueError("uncertainty bound must be nonnegative")
    return replace(cfg, erosion_delta=alpha)


@dataclass
class ModeDecision:
    mode: str
    u: np.ndarray
    verify_steps_used: int = 0
    verify_outcome: str = VERIFY_NOT_RUN


@dataclass
class VerifyResult:
    success: bool
    first_hit: int | None
    steps_used: int
    reason: str


def _in_region(region, v, tol: float = 0.0) -> bool:
    return region is not None and region.contains(v, tol)


def _stage_contains(plant: Plant, region, y) -> bool:
    """Stage-set membership: boxes live in absolute state coordinates,
    balls are centered on the equilibrium."""
    if region is None:
        return False
    if isinstance(region, NormBall):
        return region.contains(y - plant.x_eq)
    return region.contains(y)


def verify_forward(ctx: "HybridContext", x, target: NormBall, horizon: int,
                   stage_state=None, stage_input: Box | None = None) -> VerifyResult:
    """Simulate the NN-closed loop with forward Euler; certify entry into
    ``target`` within ``horizon`` steps without leaving the stage set.

    Indices follow the dispatch rule: entry counts from step 1, so a start
    state already inside the target does NOT succeed at index 0 (the caller
    routes such states to the LQR branch). The stage check applies to every
    visited pair including the start and the entry state. Inputs are
    clamped before simulation, so what is verified is what would be applied.
    """
    if horizon < 1:
        raise ValueError("verification horizon must be at least 1")
    plant = ctx.plant
    input_box = stage_input if stage_input is not None else plant.input_box
    y = np.asarray(x, dtype=float)
    steps = 0
    for i in range(horizon + 1):
        u = plant.input_box.clamp(mlp_forward(ctx.nn, y))
        if stage_state is not None and not _stage_contains(plant, stage_state, y):
            return VerifyResult(False, None, steps, VERIFY_STAGE_VIOLATION)
        if not input_box.contains(u):
            return VerifyResult(False, None, steps, VERIFY_STAGE_VIOLATION)
        if i > 0 and target.contains(y - plant.x_eq):
            return VerifyResult(True, i, steps, VERIFY_SUCCESS)
        if i == horizon:
            break
        try:
            y = _plants.euler_step(plant, y, u)
        except _plants.IntegrationBlowUp:
            return VerifyResult(False, None, steps + 1, VERIFY_NONFINITE)
        steps += 1
    return VerifyResult(False, None, steps, VERIFY_HORIZON_EXHAUSTED)


class HybridContext:
    """Assembled MAMPC controller: plant, MPC, LQR, NN and dispatch config.

    Assembly precomputes the eroded sets and validates containment
    relations (way-point ball strictly contains the attraction ball; the
    attraction ball sits inside the MPC-feasible set on sampled points).
    """

    def __init__(self, plant: Plant, mpc: MPCController, lqr: LQRSolution,
                 nn: MLPPolicy, cfg: MAMPCConfig, validate_samples: int = 16,
                 seed: int = 0):
        self.plant = plant
        self.mpc = mpc
        self.lqr = lqr
        self.nn = nn
        self.cfg = cfg
        self.step_index = 0
        if nn.layer_sizes[0] != plant.n or nn.layer_sizes[-1] != plant.m:
            raise ValueError("policy dimensions do not match the plant")
        if mpc.spec.n != plant.n or mpc.spec.m != plant.m:
            raise ValueError("MPC dimensions do not match the plant")
        if cfg.variant == WAY_POINT and cfg.wp_ball.radius <= lqr.roa.radius:
            raise ValueError("way-point ball must strictly contain the attraction ball")

        delta = cfg.erosion_delta
        self.eroded_roa = erode(lqr.roa, delta)
        self.eroded_state_box = erode(plant.state_box, delta)
        self.eroded_wp = erode(cfg.wp_ball, delta) if cfg.wp_ball is not None else None
        self.nn_disabled = self.eroded_roa is None or self.eroded_state_box is None
        # Degraded dual mode keeps the LQR active on the uneroded ball: the
        # current state is measured, not simulated, so no margin is needed.
        self.lqr_region = self.lqr.roa if self.nn_disabled else self.eroded_roa

        if validate_samples:
            rng = np.random.default_rng(seed)
            pts = lqr.roa.sample_sphere(rng, plant.n, validate_samples)
            for p in pts:
                if not mpc.feasible(plant.x_eq + p):
                    raise ValueError(
                        "attraction ball is not contained in the MPC feasible set"
                    )

    def lqr_move(self, dx: np.ndarray) -> np.ndarray:
        return self.plant.input_box.clamp(self.plant.u_eq - self.lqr.K @ dx)

    def nn_move(self, x: np.ndarray) -> np.ndarray:
        return self.plant.input_box.clamp(mlp_forward(self.nn, x))

    def mpc_move(self, x: np.ndarray) -> np.ndarray:
        res = self.mpc.control(x)
        if res.status == "infeasible":
            raise MPCInfeasibleError(
                f"fail-safe MPC infeasible at x={x}; state left the admissible set"
            )
        return self.plant.input_box.clamp(res.u0)

    def __call__(self, x, i: int | None = None) -> ModeDecision:
        idx = self.step_index if i is None else i
        return dispatch(self, x, idx)


def dispatch_standard(ctx: HybridContext, x) -> ModeDecision:
    x = np.asarray(x, dtype=float)
    dx = x - ctx.plant.x_eq
    if _in_region(ctx.lqr_region, dx):
        return ModeDecision(MODE_LQR, ctx.lqr_move(dx))
    if not ctx.nn_disabled:
        vr = verify_forward(ctx, x, ctx.eroded_roa, ctx.cfg.n_lqr,
                            stage_state=ctx.eroded_state_box)
        if vr.success:
            return ModeDecision(MODE_NN, ctx.nn_move(x), vr.steps_used, VERIFY_SUCCESS)
        outcome = vr.reason
        steps = vr.steps_used
    else:
        outcome = VERIFY_DISABLED
        steps = 0
    return ModeDecision(MODE_MPC, ctx.mpc_move(x), steps, outcome)


def dispatch_aa(ctx: HybridContext, x, i: int) -> ModeDecision:
    x = np.asarray(x, dtype=float)
    dx = x - ctx.plant.x_eq
    if _in_region(ctx.lqr_region, dx):
        return ModeDecision(MODE_LQR, ctx.lqr_move(dx))
    if ctx.nn_disabled:
        return ModeDecision(MODE_MPC, ctx.mpc_move(x), 0, VERIFY_DISABLED)
    if i % ctx.cfg.i_d == 0:
        return ModeDecision(MODE_MPC, ctx.mpc_move(x), 0, VERIFY_SKIPPED_DEFAULT)
    # guard tests the raw network output; clamping would make it vacuous
    u_raw = mlp_forward(ctx.nn, x)
    if ctx.plant.input_box.contains(u_raw):
        try:
            y1 = _plants.euler_step(ctx.plant, x, u_raw)
        except _plants.IntegrationBlowUp:
            return ModeDecision(MODE_MPC, ctx.mpc_move(x), 1, VERIFY_NONFINITE)
        if _stage_contains(ctx.plant, ctx.eroded_state_box, y1):
            return ModeDecision(MODE_NN, ctx.plant.input_box.clamp(u_raw), 1, VERIFY_SUCCESS)
    return ModeDecision(MODE_MPC, ctx.mpc_move(x), 1, VERIFY_STAGE_VIOLATION)


def dispatch_wp(ctx: HybridContext, x) -> ModeDecision:
    x = np.asarray(x, dtype=float)
    dx = x - ctx.plant.x_eq
    if _in_region(ctx.lqr_region, dx):
        return ModeDecision(MODE_LQR, ctx.lqr_move(dx))
    if ctx.nn_disabled:
        return ModeDecision(MODE_MPC, ctx.mpc_move(x), 0, VERIFY_DISABLED)
    if ctx.cfg.wp_ball.contains(dx):
        # inner branch: reach the attraction ball while staying in the
        # way-point region
        vr = verify_forward(ctx, x, ctx.eroded_roa, ctx.cfg.n_lqr,
                            stage_state=ctx.eroded_wp)
    else:
        # outer branch: reach the way-point ball under the plain stage set
        vr = verify_forward(ctx, x, ctx.eroded_wp, ctx.cfg.n_wp,
                            stage_state=ctx.eroded_state_box)
    if vr.success:
        return ModeDecision(MODE_NN, ctx.nn_move(x), vr.steps_used, VERIFY_SUCCESS)
    return ModeDecision(MODE_MPC, ctx.mpc_move(x), vr.steps_used, vr.reason)


def dispatch(ctx: HybridContext, x, i: int = 0) -> ModeDecision:
    if ctx.cfg.variant == STANDARD:
        return dispatch_standard(ctx, x)
    if ctx.cfg.variant == ALTERNATING:
        return dispatch_aa(ctx, x, i)
    return dispatch_wp(ctx, x)


def dispatch_parallel(ctx: HybridContext, x, i: int = 0, executor=None) -> ModeDecision:
    """Compute the three mode candidates concurrently; priority still decides.

    Matches the paper-style parallel execution strategy: the MPC runs every
    step (bounding worst-case latency by the MPC alone), and the dispatch
    outcome equals sequential dispatch up to solver tolerance on the move.
    """
    from concurrent.futures import ThreadPoolExecutor

    x = np.asarray(x, dtype=float)
    dx = x - ctx.plant.x_eq

    def lqr_candidate():
        if _in_region(ctx.lqr_region, dx):
            return ModeDecision(MODE_LQR, ctx.lqr_move(dx))
        return None

    def nn_candidate():
        if ctx.nn_disabled:
            return None
        if ctx.cfg.variant == ALTERNATING:
            return _aa_nn_candidate(ctx, x, i)
        if ctx.cfg.variant == STANDARD:
            vr = verify_forward(ctx, x, ctx.eroded_roa, ctx.cfg.n_lqr,
                                stage_state=ctx.eroded_state_box)
        elif ctx.cfg.wp_ball.contains(dx):
            vr = verify_forward(ctx, x, ctx.eroded_roa, ctx.cfg.n_lqr,
                                stage_state=ctx.eroded_wp)
        else:
            vr = verify_forward(ctx, x, ctx.eroded_wp, ctx.cfg.n_wp,
                                stage_state=ctx.eroded_state_box)
        if vr.success:
            return ModeDecision(MODE_NN, ctx.nn_move(x), vr.steps_used, VERIFY_SUCCESS)
        return None

    def mpc_candidate():
        return ModeDecision(MODE_MPC, ctx.mpc_move(x))

    own = executor is None
    pool = executor or ThreadPoolExecutor(max_workers=3)
    try:
        futs = [pool.submit(fn) for fn in (lqr_candidate, nn_candidate, mpc_candidate)]
        lqr_dec, nn_dec, mpc_dec = (f.result() for f in futs)
    finally:
        if own:
            pool.shutdown(wait=False)
    if lqr_dec is not None:
        return lqr_dec
    if nn_dec is not None:
        return nn_dec
    return mpc_dec


def _aa_nn_candidate(ctx: HybridContext, x, i: int):
    if i % ctx.cfg.i_d == 0:
        return None
    u_raw = mlp_forward(ctx.nn, x)
    if not ctx.plant.input_box.contains(u_raw):
        return None
    try:
        y1 = _plants.euler_step(ctx.plant, x, u_raw)
    except _plants.IntegrationBlowUp:
        return None
    if not _stage_contains(ctx.plant, ctx.eroded_state_box, y1):
        return None
    return ModeDecision(MODE_NN, ctx.plant.input_box.clamp(u_raw), 1, VERIFY_SUCCESS)


# ---------------------------------------------------------------------------
# Fail-free sampling check (can the MPC mode be removed?)
# ---------------------------------------------------------------------------

@dataclass
class FailFreeReport:
    """Sampled test of the fail-free inequalities; a check, not a certificate."""

    passed: bool
    n_checked: int
    n_excluded: int            # samples outside the MPC-feasible set
    admissibility_violations: int
    cost_bound_violations: int
    margin_violations: int
    worst_cost_gap: float      # max of L - (J* + gamma); negative when holding
    worst_margin: float        # max of gamma - c(x, 0); negative when holding


def failfree_check(ctx: HybridContext, sample_box: Box, n_samples: int,
                   gamma=None, seed: int = 0) -> FailFreeReport:
    """Check, on sampled states, that the NN alone satisfies the fail-free
    inequalities: admissibility of (x, u_NN(x)), rollout cost within gamma
    of the MPC optimum, and gamma strictly below the zero-input stage cost.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    spec = ctx.mpc.spec
    plant = ctx.plant

    def stage_cost(dx, du):
        return float(dx @ spec.Q @ dx + du @ spec.R @ du)

    if gamma is None:
        def gamma(x):
            dx = np.asarray(x, float) - plant.x_eq
            return 0.5 * float(dx @ spec.Q @ dx)

    rng = np.random.default_rng(seed)
    xs = sample_box.sample(rng, n_samples)
    n_excluded = 0
    n_checked = 0
    v_adm = v_cost = v_margin = 0
    worst_gap = -np.inf
    worst_margin = -np.inf
    for x in xs:
        res = ctx.mpc.control(x)
        if not res.feasible:
            n_excluded += 1
            continue
        n_checked += 1
        u_raw = mlp_forward(ctx.nn, x)
        if not (plant.state_box.contains(x) and plant.input_box.contains(u_raw)):
            v_adm += 1
        # rollout cost of the raw NN over the MPC horizon (true plant steps)
        y = x.copy()
        L = 0.0
        blew_up = False
        for _ in range(spec.N):
            u = mlp_forward(ctx.nn, y)
            L += stage_cost(y - plant.x_eq, u - plant.u_eq)
            try:
                y = _plants.step(plant, y, u)
            except _plants.IntegrationBlowUp:
                blew_up = True
                break
        if blew_up:
            L = np.inf
        else:
            dy = y - plant.x_eq
            L += float(dy @ spec.Qf @ dy)
        g = float(gamma(x))
        gap = L - (res.cost + g)
        worst_gap = max(worst_gap, gap)
        if gap > 1e-9:
            v_cost += 1
        dx = x - plant.x_eq
        if np.linalg.norm(dx) > 0:
            margin = g - stage_cost(dx, np.zeros(plant.m))
            worst_margin = max(worst_margin, margin)
            if margin >= 0:
                v_margin += 1
    passed = n_checked > 0 and v_adm == 0 and v_cost == 0 and v_margin == 0
    return FailFreeReport(passed, n_checked, n_excluded, v_adm, v_cost, v_margin,
                          worst_gap, worst_margin)


def estimate_model_gap(plant: Plant, policy: MLPPolicy, region: NormBall,
                       n_samples: int = 200, horizon: int = 5,
                       seed: int = 0) -> dict:
    """Measure the forward-Euler vs RK4 trajectory gap under the NN policy.

    Samples start states from ``region``, rolls both integrators for
    ``horizon`` steps with clamped NN inputs, and reports the largest
    one-step and accumulated deviations. Use the result to size
    robustify()'s erosion margin.
    """
    rng = np.random.default_rng(seed)
    starts = plant.x_eq + region.sample(rng, plant.n, n_samples)
    one_step = 0.0
    accumulated = 0.0
    for x0 in starts:
        ye = x0.copy()
        yr = x0.copy()
        for _ in range(horizon):
            ue = plant.input_box.clamp(mlp_forward(policy, ye))
            ur = plant.input_box.clamp(mlp_forward(policy, yr))
            try:
                ye_next = _plants.euler_step(plant, ye, ue)
                yr_next = _plants.step(plant, yr, ur)
                one_step = max(one_step, float(np.linalg.norm(
                    _plants.euler_step(plant, yr, ur) - yr_next)))
            except _plants.IntegrationBlowUp:
                one_step = np.inf
                accumulated = np.inf
                break
            ye, yr = ye_next, yr_next
            accumulated = max(accumulated, float(np.linalg.norm(ye - yr)))
    return {"one_step_max": one_step, "accumulated_max": accumulated,
            "n_samples": n_samples, "horizon": horizon, "seed": seed}
