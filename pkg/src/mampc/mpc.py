"""Finite-horizon MPC over the equilibrium linearization, condensed to a dense QP.

The predicted states are eliminated by substitution, leaving the stacked
input sequence as the only decision variable (d = N*m). Constraint rows
carry the input boxes, optional per-step state boxes, and an optional
terminal ball encoded as a tight outer polytope. The first input block of
the optimizer is the control move.

All public entry points take and return actual plant coordinates; the
deviation shift (x - x_eq, u - u_eq) is internal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lqr as _lqr
from .plants import Plant, linearize_discrete
from .qp import MAX_ITERS, OPTIMAL, PRIMAL_INFEASIBLE, QPWorkspace
from .sets import Box, NormBall, ball_tangent_directions

TERMINAL_FACETS_PER_DIM = 8


class MPCError(Exception):
    pass


@dataclass(frozen=True)
class MPCSpec:
    """Horizon, weights, linearized dynamics and constraint geometry."""

    N: int
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    A_d: np.ndarray
    B_d: np.ndarray
    input_box: Box
    state_box: Box | None = None
    terminal_ball: NormBall | None = None
    x_eq: np.ndarray | None = None
    u_eq: np.ndarray | None = None

    def __post_init__(self):
        n = self.A_d.shape[0] if hasattr(self.A_d, "shape") else len(self.A_d)
        for name in ("Q", "R", "Qf", "A_d", "B_d"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n, m = self.B_d.shape
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if self.A_d.shape != (n, n) or self.Q.shape != (n, n) or self.Qf.shape != (n, n):
            raise ValueError("state-space dimensions are inconsistent")
        if self.R.shape != (m, m):
            raise ValueError("input weight dimension does not match B_d")
        if self.input_box.dim != m:
            raise ValueError("input box dimension does not match B_d")
        if self.state_box is not None and self.state_box.dim != n:
            raise ValueError("state box dimension does not match A_d")
        x_eq = np.zeros(n) if self.x_eq is None else np.asarray(self.x_eq, dtype=float)
        u_eq = np.zeros(m) if self.u_eq is None else np.asarray(self.u_eq, dtype=float)
        object.__setattr__(self, "x_eq", x_eq)
        object.__setattr__(self, "u_eq", u_eq)
        for M, label in ((self.Q, "Q"), (self.Qf, "Qf")):
            if np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) < -1e-9:
                raise ValueError(f"{label} must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise ValueError("R must be positive definite")

    @property
    def n(self) -> int:
        return self.A_d.shape[0]

    @property
    def m(self) -> int:
        return self.B_d.shape[1]


def make_mpc_spec(plant: Plant, N: int, Q, R, Qf=None, state_box: Box | None = None,
                  terminal_ball: NormBall | None = None) -> MPCSpec:
    """Build an MPCSpec from a plant: linearize at the equilibrium, default
    the terminal weight to the Riccati solution (decrease condition holds by
    construction on the linearized model)."""
    A_d, B_d = linearize_discrete(plant)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if Qf is None:
        Qf = _lqr.solve_dare(A_d, B_d, Q, R)
    return MPCSpec(N=N, Q=Q, R=R, Qf=np.asarray(Qf, dtype=float), A_d=A_d, B_d=B_d,
                   input_box=plant.input_box, state_box=state_box,
                   terminal_ball=terminal_ball, x_eq=plant.x_eq, u_eq=plant.u_eq)


@dataclass
class MPCResult:
    u0: np.ndarray
    predicted_states: np.ndarray   # (N+1, n), actual coordinates
    predicted_inputs: np.ndarray   # (N, m), actual coordinates
    cost: float
    feasible: bool
    status: str
    iterations: int = 0


class _Condensation:
    """Prediction and cost matrices shared by every solve of one spec.

    Condensing is pre-stabilized: the decision variable is v in
    u_k = -K_pre x_k + v_k with K_pre the Riccati gain, so prediction
    matrices carry powers of the stable closed loop instead of the raw
    (possibly strongly unstable) A_d. This is an exact reparameterization
    of the same QP; without it the condensed Hessian for the stiff plants
    reaches condition numbers near 1/eps and no solver can return accurate
    inputs in double precision.
    """

    def __init__(self, spec: MPCSpec):
        N, n, m = spec.N, spec.n, spec.m
        A, B = spec.A_d, spec.B_d
        try:
            P_pre = _lqr.solve_dare(A, B, spec.Q, spec.R)
            K_pre = _lqr.lqr_gain(P_pre, A, B, spec.R)
        except _lqr.DAREError:
            K_pre = np.zeros((m, n))
        self.K_pre = K_pre
        Acl = A - B @ K_pre
        powers = [np.eye(n)]
        for _ in range(N):
            powers.append(Acl @ powers[-1])
        # deviation states 1..N:   X1 = Sx dx0 + Sv V
        Sx = np.vstack([powers[k] for k in range(1, N + 1)])
        Sv = np.zeros((N * n, N * m))
        for k in range(1, N + 1):
            for j in range(k):
                Sv[(k - 1) * n:k * n, j * m:(j + 1) * m] = powers[k - 1 - j] @ B
        # deviation states 0..N-1 feeding the feedback term of each input
        Hx = np.vstack([powers[k] for k in range(N)])
        Hv = np.zeros((N * n, N * m))
        Hv[n:, :] = Sv[:-n, :]
        Kbar = np.kron(np.eye(N), K_pre)
        # actual deviation inputs: U = Tx dx0 + Tv V
        Tx = -Kbar @ Hx
        Tv = np.eye(N * m) - Kbar @ Hv
        blocks = [spec.Q] * (N - 1) + [spec.Qf]
        Qbar = np.zeros((N * n, N * n))
        for k, blk in enumerate(blocks):
            Qbar[k * n:(k + 1) * n, k * n:(k + 1) * n] = blk
        Rbar = np.kron(np.eye(N), spec.R)
        H = 2.0 * (Sv.T @ Qbar @ Sv + Tv.T @ Rbar @ Tv)
        H = 0.5 * (H + H.T)
        # Uniform cost normalization: the minimizer is invariant and the
        # solver's absolute KKT tolerances stay attainable.
        self.cost_scale = max(1.0, np.max(np.abs(H)))
        self.H = H / self.cost_scale
        self.G = (2.0 / self.cost_scale) * (Sv.T @ Qbar @ Sx + Tv.T @ Rbar @ Tx)
        self.Sx = Sx
        self.Sv = Sv
        self.Tx = Tx
        self.Tv = Tv
        self.spec = spec

        # Constraint rows: input boxes, finite state-box rows, terminal facets.
        rows = [Tv]
        self._state_rows = None
        if spec.state_box is not None:
            finite = np.isfinite(spec.state_box.lower) | np.isfinite(spec.state_box.upper)
            if np.any(finite):
                idx = np.concatenate([k * n + np.flatnonzero(finite) for k in range(N)])
                rows.append(Sv[idx])
                self._state_rows = idx
        self._facets = None
        if spec.terminal_ball is not None:
            V = ball_tangent_directions(n, TERMINAL_FACETS_PER_DIM * n)
            rows.append(V @ Sv[(N - 1) * n:])
            self._facets = V
        self.C = np.vstack(rows)

    def bounds(self, dx0: np.ndarray):
        spec = self.spec
        N, n = spec.N, spec.n
        u_shift = self.Tx @ dx0
        lo = [np.tile(spec.input_box.lower - spec.u_eq, N) - u_shift]
        hi = [np.tile(spec.input_box.upper - spec.u_eq, N) - u_shift]
        free = None
        if self._state_rows is not None:
            free = self.Sx @ dx0
            idx = self._state_rows
            lo.append(np.tile(spec.state_box.lower, N)[idx] - free[idx])
            hi.append(np.tile(spec.state_box.upper, N)[idx] - free[idx])
        if self._facets is not None:
            if free is None:
                free = self.Sx @ dx0
            vf = self._facets @ free[(N - 1) * n:]
            lo.append(np.full(vf.shape[0], -np.inf))
            hi.append(spec.terminal_ball.radius - vf)
        return np.concatenate(lo), np.concatenate(hi)

    def inputs(self, dx0: np.ndarray, v_seq: np.ndarray) -> np.ndarray:
        """Deviation input sequence (N, m) realized by the decision vector."""
        return (self.Tx @ dx0 + self.Tv @ v_seq).reshape(self.spec.N, self.spec.m)

    def predict(self, dx0: np.ndarray, v_seq: np.ndarray):
        """Deviation state trajectory (N+1, n) under the decision vector."""
        spec = self.spec
        free = self.Sx @ dx0 + self.Sv @ v_seq
        return np.vstack([dx0, free.reshape(spec.N, spec.n)])


def condense(spec: MPCSpec, x0) -> "QProblem":
    """Dense QP over the stacked deviation-input sequence at state x0."""
    from .qp import QProblem

    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.n,):
        raise ValueError(f"state has shape {x0.shape}, expected ({spec.n},)")
    cond = _Condensation(spec)
    dx0 = x0 - spec.x_eq
    lo, hi = cond.bounds(dx0)
    return QProblem(cond.H, cond.G @ dx0, cond.C, lo, hi)


class MPCController:
    """Receding-horizon controller owning a private solver workspace.

    Warm-starts each solve from the previous optimum; the returned move is
    warm-start independent to solver tolerance.
    """

    def __init__(self, spec: MPCSpec, max_iters: int = 4000):
        self.spec = spec
        self.cond = _Condensation(spec)
        lo0, hi0 = self.cond.bounds(np.zeros(spec.n))
        self.workspace = QPWorkspace(self.cond.H, self.cond.C, lo0, hi0)
        self.max_iters = max_iters
        self.fallback_K = self.cond.K_pre
        self._warm_z = None
        self._warm_y = None
        self._phase1 = None

    def reset(self):
        self._warm_z = None
        self._warm_y = None

    def control(self, x, warm: bool = True) -> MPCResult:
        spec = self.spec
        x = np.asarray(x, dtype=float)
        if x.shape != (spec.n,):
            raise ValueError(f"state has shape {x.shape}, expected ({spec.n},)")
        if not np.all(np.isfinite(x)):
            raise ValueError("state must be finite")
        dx0 = x - spec.x_eq
        g = self.cond.G @ dx0
        lo, hi = self.cond.bounds(dx0)
        sol = self.workspace.solve(
            g, lo, hi,
            warm_start=self._warm_z if warm else None,
            warm_duals=self._warm_y if warm else None,
            max_iters=self.max_iters,
        )
        if sol.status == PRIMAL_INFEASIBLE:
            self.reset()
            u0 = spec.input_box.clamp(spec.u_eq - self.fallback_K @ dx0)
            empty_states = np.tile(x, (spec.N + 1, 1))
            return MPCResult(u0=u0, predicted_states=empty_states,
                             predicted_inputs=np.tile(u0, (spec.N, 1)),
                             cost=np.inf, feasible=False, status="infeasible",
                             iterations=sol.iterations)
        if warm:
            self._warm_z = sol.z.copy()
            self._warm_y = sol.duals.copy()
        dev_states = self.cond.predict(dx0, sol.z)
        dev_inputs = self.cond.inputs(dx0, sol.z)
        cost = float(
            sum(dev_states[k] @ spec.Q @ dev_states[k] for k in range(spec.N))
            + sum(dev_inputs[k] @ spec.R @ dev_inputs[k] for k in range(spec.N))
            + dev_states[spec.N] @ spec.Qf @ dev_states[spec.N]
        )
        feasible = sol.status == OPTIMAL
        status = "optimal" if sol.status == OPTIMAL else MAX_ITERS
        return MPCResult(
            u0=dev_inputs[0] + spec.u_eq,
            predicted_states=dev_states + spec.x_eq,
            predicted_inputs=dev_inputs + spec.u_eq,
            cost=cost,
            feasible=feasible,
            status=status,
            iterations=sol.iterations,
        )

    def feasible(self, x) -> bool:
        """Phase-1 probe: does the condensed QP admit a feasible point at x?

        Minimizes a uniform slack t over all constraint rows; the set is
        nonempty iff the optimal slack is (numerically) zero.
        """
        spec = self.spec
        x = np.asarray(x, dtype=float)
        dx0 = x - spec.x_eq
        lo, hi = self.cond.bounds(dx0)
        d = self.cond.C.shape[1]
        if self._phase1 is None:
            C = self.cond.C
            k = C.shape[0]
            rows = []
            fin_hi = np.isfinite(hi)
            fin_lo = np.isfinite(lo)
            rows.append(np.hstack([C, -np.ones((k, 1))]))   # C z - t <= hi
            rows.append(np.hstack([-C, -np.ones((k, 1))]))  # -C z - t <= -lo
            t_row = np.zeros((1, d + 1))
            t_row[0, d] = 1.0
            rows.append(t_row)                               # t >= 0
            C1 = np.vstack(rows)
            H1 = np.diag(np.concatenate([np.full(d, 1e-9), [1.0]]))
            self._phase1 = (H1, C1, fin_hi, fin_lo)
            lo1 = np.concatenate([np.full(2 * k, -np.inf), [0.0]])
            hi1_template = np.empty(2 * k + 1)
            self._phase1_ws = QPWorkspace(H1, C1, lo1, np.full(2 * k + 1, np.inf))
            self._phase1_lo = lo1
        H1, C1, fin_hi, fin_lo = self._phase1
        k = self.cond.C.shape[0]
        hi1 = np.empty(2 * k + 1)
        hi1[:k] = np.where(fin_hi, hi, np.inf)
        hi1[k:2 * k] = np.where(fin_lo, -lo, np.inf)
        hi1[2 * k] = np.inf
        sol = self._phase1_ws.solve(np.zeros(d + 1), self._phase1_lo, hi1)
        if sol.status != OPTIMAL:
            return False
        return float(sol.z[d]) <= 1e-6


def mpc_control(spec: MPCSpec, x, warm_start=None) -> MPCResult:
    """One-shot MPC move; see MPCController for the resolving path."""
    ctrl = MPCController(spec)
    if warm_start is not None:
        ctrl._warm_z = np.asarray(warm_start, dtype=float)
    return ctrl.control(x, warm=warm_start is not None)


def feasible_set_member(spec: MPCSpec, x) -> bool:
    """True iff the condensed QP at x admits a feasible point."""
    return MPCController(spec).feasible(x)
