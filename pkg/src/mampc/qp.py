"""Dense convex QP solver for the MPC hot path.

Solves  min 1/2 z'Hz + g'z  s.t.  lb <= Cz <= ub  by operator splitting
(ADMM with over-relaxation, the OSQP iteration) followed by an active-set
polish that pushes the KKT residual to solver tolerance. The KKT matrix is
factorized once per problem structure and reused across solves, so a
controller resolving the same-shaped QP every step pays factorization cost
only at setup.

Dual convention: stationarity is H z + g + C' y = 0 with y >= 0 on rows at
their upper bound and y <= 0 on rows at their lower bound.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
MAX_ITERS = "max_iters"

# Contract tolerances: status == optimal implies primal feasibility within
# EPS_PRIMAL and stationarity/complementarity within EPS_KKT.
EPS_PRIMAL = 1e-8
EPS_KKT = 1e-6

_HESSIAN_REG = 1e-9
_SIGMA = 1e-6
_ALPHA = 1.6  # over-relaxation
_RHO_DEFAULT = 0.1
_RHO_EQ_SCALE = 1e3
_CHECK_INTERVAL = 10
_INFEAS_WINDOW = 100  # consecutive certificate hits before declaring infeasible


class QPError(Exception):
    pass


class HessianError(QPError):
    """Hessian failed validation (asymmetric, indefinite, or zero)."""


@dataclass
class QProblem:
    """min 1/2 z'Hz + g'z  s.t.  lb <= Cz <= ub (entries of lb/ub may be inf)."""

    H: np.ndarray
    g: np.ndarray
    C: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float).ravel()
        self.C = np.asarray(self.C, dtype=float)
        if self.C.ndim == 1:
            self.C = self.C.reshape(1, -1)
        self.lb = np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.asarray(self.ub, dtype=float).ravel()
        d = self.g.shape[0]
        k = self.C.shape[0]
        if self.H.shape != (d, d):
            raise ValueError(f"H has shape {self.H.shape}, expected ({d}, {d})")
        if self.C.shape[1] != d:
            raise ValueError(f"C has {self.C.shape[1]} columns, expected {d}")
        if self.lb.shape != (k,) or self.ub.shape != (k,):
            raise ValueError("bound vectors do not match constraint row count")
        scale = max(1.0, np.max(np.abs(self.H)))
        if np.max(np.abs(self.H - self.H.T)) > 1e-10 * scale:
            raise HessianError("Hessian is not symmetric to 1e-10")
        if np.any(self.lb > self.ub):
            bad = int(np.argmax(self.lb > self.ub))
            raise ValueError(f"lb > ub at constraint row {bad}")

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.C.shape[0]


@dataclass
class QPSolution:
    z: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    duals: np.ndarray
    objective: float = 0.0


def _validate_hessian(H: np.ndarray):
    """Reject Hessians that cannot define a bounded-below strictly convex QP.

    A zero Hessian makes the objective linear (unbounded whenever g has a
    component along an unconstrained direction); indefiniteness survives the
    +1e-9 regularization and shows up as a failed Cholesky.
    """
    if np.max(np.abs(H)) == 0.0:
        raise HessianError("Hessian is zero; objective has no curvature")
    try:
        np.linalg.cholesky(H + _HESSIAN_REG * np.eye(H.shape[0]))
    except np.linalg.LinAlgError:
        raise HessianError("Hessian is not positive semidefinite (regularized factorization failed)") from None


def kkt_residual(p: QProblem, s: QPSolution) -> float:
    """Max of stationarity, primal-feasibility and complementarity residuals."""
    return _kkt_parts(p, s.z, s.duals)[3]


def _kkt_parts(p: QProblem, z: np.ndarray, y: np.ndarray):
    Cz = p.C @ z
    stat = np.max(np.abs(p.H @ z + p.g + p.C.T @ y)) if p.dim else 0.0
    if p.n_constraints:
        prim = max(np.max(np.maximum(Cz - p.ub, 0.0), initial=0.0),
                   np.max(np.maximum(p.lb - Cz, 0.0), initial=0.0))
        y_up = np.maximum(y, 0.0)
        y_lo = np.maximum(-y, 0.0)
        slack_up = np.where(np.isfinite(p.ub), np.abs(p.ub - Cz), 1.0)
        slack_lo = np.where(np.isfinite(p.lb), np.abs(Cz - p.lb), 1.0)
        comp = max(np.max(y_up * slack_up, initial=0.0), np.max(y_lo * slack_lo, initial=0.0))
    else:
        prim = comp = 0.0
    return stat, prim, comp, max(stat, prim, comp)


def _objective(p: QProblem, z: np.ndarray) -> float:
    return float(0.5 * z @ p.H @ z + p.g @ z)


def _ruiz_equilibrate(H: np.ndarray, C: np.ndarray, iters: int = 10):
    """Diagonal scalings (D, E, c) equilibrating the stacked [H C'; C 0].

    Returns per-variable scales D, per-row scales E and a cost scale c such
    that the scaled problem (c DHD, ECD) has row/column infinity norms near
    one. Condensed MPC Hessians span many orders of magnitude (powers of an
    unstable A_d), and operator splitting stalls without this.
    """
    d, k = H.shape[0], C.shape[0]
    D = np.ones(d)
    E = np.ones(k)
    c = 1.0
    for _ in range(iters):
        Hs = c * (D[:, None] * H * D[None, :])
        Cs = (E[:, None] * C) * D[None, :]
        col = np.maximum(np.max(np.abs(Hs), axis=0, initial=0.0),
                         np.max(np.abs(Cs), axis=0, initial=0.0))
        col[col == 0] = 1.0
        D /= np.sqrt(col)
        if k:
            row = np.max(np.abs(Cs), axis=1, initial=0.0)
            row[row == 0] = 1.0
            E /= np.sqrt(row)
        Hs = c * (D[:, None] * H * D[None, :])
        mean_col = np.mean(np.max(np.abs(Hs), axis=0, initial=0.0)) if d else 1.0
        if mean_col > 0:
            gamma = 1.0 / max(mean_col, 1e-12)
            c *= gamma
    return D, E, c


class QPWorkspace:
    """Reusable solver state for a fixed (H, C) structure.

    Owns the Ruiz scaling, the KKT factorization, and all iteration buffers;
    repeated solves with new (g, lb, ub) reuse them, keeping the per-step
    hot path free of fresh large allocations.
    """

    def __init__(self, H: np.ndarray, C: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                 rho0: float = _RHO_DEFAULT):
        H = np.asarray(H, dtype=float)
        C = np.asarray(C, dtype=float)
        _validate_hessian(H)
        self.H = H
        self.C = C
        self.d = H.shape[0]
        self.k = C.shape[0]
        self.D, self.E, self.c = _ruiz_equilibrate(H, C)
        self.Hs = self.c * (self.D[:, None] * H * self.D[None, :])
        self.Cs = (self.E[:, None] * C) * self.D[None, :]
        self._eq_rows = np.isfinite(lb) & np.isfinite(ub) & (ub - lb < 1e-9)
        self.rho_scalar = rho0
        self._set_rho(rho0)
        # iteration buffers (scaled space)
        self.z = np.zeros(self.d)
        self.s = np.zeros(self.k)
        self.y = np.zeros(self.k)
        self.rhs = np.zeros(self.d + self.k)
        self._w = np.zeros(self.k)
        self._dy = np.zeros(self.k)
        self._Cz = np.zeros(self.k)
        self._gs = np.zeros(self.d)
        self._lbs = np.zeros(self.k)
        self._ubs = np.zeros(self.k)

    def _set_rho(self, rho0: float):
        """(Re)build the KKT factorization for a new penalty level."""
        rho = np.full(self.k, rho0)
        rho[self._eq_rows] = rho0 * _RHO_EQ_SCALE
        self.rho_scalar = rho0
        self.rho = rho
        self.rho_inv = 1.0 / rho
        kkt = np.zeros((self.d + self.k, self.d + self.k))
        kkt[:self.d, :self.d] = self.Hs + (_SIGMA + _HESSIAN_REG) * np.eye(self.d)
        kkt[:self.d, self.d:] = self.Cs.T
        kkt[self.d:, :self.d] = self.Cs
        kkt[self.d:, self.d:] = -np.diag(self.rho_inv)
        self.lu = scipy.linalg.lu_factor(kkt, check_finite=False)

    def _unscale(self, z, y):
        return self.D * z, self.E * y / self.c

    def solve(self, g, lb, ub, warm_start=None, warm_duals=None,
              max_iters: int = 4000) -> QPSolution:
        g = np.asarray(g, dtype=float)
        lb = np.asarray(lb, dtype=float)
        ub = np.asarray(ub, dtype=float)
        d, k = self.d, self.k
        z, s, y = self.z, self.s, self.y

        # scale the instance (variables z_hat = z / D, rows by E, cost by c)
        np.multiply(self.c * self.D, g, out=self._gs)
        gs = self._gs
        np.multiply(self.E, lb, out=self._lbs)
        np.multiply(self.E, ub, out=self._ubs)
        lbs, ubs = self._lbs, self._ubs

        if warm_start is not None:
            np.divide(warm_start, self.D, out=z)
        else:
            z[:] = 0.0
        np.dot(self.Cs, z, out=self._Cz)
        np.clip(self._Cz, lbs, ubs, out=s)
        if warm_duals is not None:
            np.multiply(warm_duals, self.c / self.E, out=y)
        else:
            y[:] = 0.0

        problem = QProblem(self.H, g, self.C, lb, ub)
        g_scale = max(1.0, np.max(np.abs(gs)) if d else 1.0)
        infeas_hits = 0
        tighten = 1.0  # shrinks after a failed polish so we do not re-polish in place

        if warm_duals is not None:
            # A warm dual vector carries the previous active set; when it is
            # unchanged a single polish solves the new instance outright.
            z_out, y_out = self._polish(problem, *self._unscale(z, y))
            stat, prim, comp, res = _kkt_parts(problem, z_out, y_out)
            if prim <= EPS_PRIMAL and max(stat, comp) <= EPS_KKT:
                return QPSolution(z_out, OPTIMAL, res, 1, y_out, _objective(problem, z_out))

        next_polish = 10  # doubling schedule; polish is cheap relative to stalling

        for it in range(1, max_iters + 1):
            # KKT solve for (z~, nu)
            np.multiply(_SIGMA, z, out=self.rhs[:d])
            self.rhs[:d] -= gs
            np.multiply(self.rho_inv, y, out=self.rhs[d:])
            np.subtract(s, self.rhs[d:], out=self.rhs[d:])
            sol = scipy.linalg.lu_solve(self.lu, self.rhs, overwrite_b=True, check_finite=False)
            zt = sol[:d]
            nu = sol[d:]
            # s~ = s + (nu - y) / rho
            st = nu
            np.subtract(nu, y, out=st)
            st *= self.rho_inv
            st += s
            # over-relaxed updates
            z *= 1.0 - _ALPHA
            z += _ALPHA * zt
            w = self._w
            np.multiply(_ALPHA, st, out=w)
            w += (1.0 - _ALPHA) * s
            w += self.rho_inv * y
            dy = self._dy
            dy[:] = y
            np.clip(w, lbs, ubs, out=s)
            np.subtract(w, s, out=w)
            np.multiply(self.rho, w, out=y)
            np.subtract(y, dy, out=dy)  # dy = y_new - y_old

            # primal infeasibility certificate on dy (scaled space)
            if k and self._certifies_infeasible(dy, lbs, ubs):
                infeas_hits += 1
                if infeas_hits >= _INFEAS_WINDOW:
                    z_out, y_out = self._unscale(z, y)
                    return QPSolution(z_out.copy(), PRIMAL_INFEASIBLE, np.inf, it,
                                      y_out.copy(), _objective(problem, z_out))
            else:
                infeas_hits = 0

            if it % _CHECK_INTERVAL == 0 or it >= next_polish or it == max_iters:
                np.dot(self.Cs, z, out=self._Cz)
                r_prim = np.max(np.abs(self._Cz - s), initial=0.0)
                r_dual = np.max(np.abs(self.Hs @ z + gs + self.Cs.T @ y), initial=0.0)
                gate = (r_prim <= tighten * 1e-5 * max(1.0, np.max(np.abs(s), initial=0.0))
                        and r_dual <= tighten * 1e-5 * g_scale)
                # Polish on a doubling schedule even before the residual gate
                # opens: the equality solve is cheap, and once the active set
                # has settled it finishes the solve outright.
                if gate or it >= next_polish:
                    if it >= next_polish:
                        next_polish *= 2
                    z_out, y_out = self._polish(problem, *self._unscale(z, y))
                    stat, prim, comp, res = _kkt_parts(problem, z_out, y_out)
                    if prim <= EPS_PRIMAL and max(stat, comp) <= EPS_KKT:
                        return QPSolution(z_out, OPTIMAL, res, it, y_out,
                                          _objective(problem, z_out))
                    if gate:
                        tighten *= 0.1
                # Rebalance the penalty when the scaled residuals drift apart
                # (standard operator-splitting adaptation; requires refactoring).
                if it % 50 == 0 and r_prim > 0 and r_dual > 0:
                    ratio = (r_prim / max(1e-12, np.max(np.abs(s), initial=1.0))) / \
                            (r_dual / max(1e-12, g_scale))
                    if ratio > 25.0 or ratio < 0.04:
                        new_rho = float(np.clip(self.rho_scalar * np.sqrt(ratio),
                                                1e-4, 1e4))
                        if new_rho != self.rho_scalar:
                            self._set_rho(new_rho)

        # iteration cap reached: return the best iterate, polished if it helps
        z_out, y_out = self._polish(problem, *self._unscale(z, y))
        stat, prim, comp, res = _kkt_parts(problem, z_out, y_out)
        status = OPTIMAL if (prim <= EPS_PRIMAL and max(stat, comp) <= EPS_KKT) else MAX_ITERS
        return QPSolution(z_out, status, res, max_iters, y_out, _objective(problem, z_out))

    def _certifies_infeasible(self, dy, lb, ub, tol: float = 1e-10) -> bool:
        norm = np.max(np.abs(dy), initial=0.0)
        if norm <= tol:
            return False
        v = dy / norm
        if np.max(np.abs(self.Cs.T @ v), initial=0.0) > 1e-8:
            return False
        vp = np.maximum(v, 0.0)
        vm = np.minimum(v, 0.0)
        # components pushing on an infinite bound can never certify
        if np.any(vp[np.isinf(ub)] > 1e-12) or np.any(vm[np.isinf(lb)] < -1e-12):
            return False
        support = float(np.sum(ub[np.isfinite(ub)] * vp[np.isfinite(ub)])
                        + np.sum(lb[np.isfinite(lb)] * vm[np.isfinite(lb)]))
        return support < -1e-10

    def _polish(self, p: QProblem, z: np.ndarray, y: np.ndarray):
        """Equality-solve on the active set detected from dual signs."""
        ytol = 1e-9 * max(1.0, np.max(np.abs(y), initial=0.0))
        Cz = p.C @ z
        lower = (y < -ytol) | (Cz <= p.lb + 1e-9)
        upper = (y > ytol) | (Cz >= p.ub - 1e-9)
        eq = np.isfinite(p.lb) & np.isfinite(p.ub) & (p.ub - p.lb < 1e-9)
        lower |= eq
        lower &= np.isfinite(p.lb)
        upper &= np.isfinite(p.ub) & ~lower
        active = lower | upper
        na = int(np.count_nonzero(active))
        d = p.dim
        E = p.C[active]
        b = np.where(lower[active], p.lb[active], p.ub[active])
        kkt = np.zeros((d + na, d + na))
        kkt[:d, :d] = p.H + _HESSIAN_REG * np.eye(d)
        kkt[:d, d:] = E.T
        kkt[d:, :d] = E
        kkt[d:, d:] = -_HESSIAN_REG * np.eye(na)
        rhs = np.concatenate([-p.g, b])
        try:
            lu = scipy.linalg.lu_factor(kkt, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            return z, y
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        # iterative refinement against the unregularized KKT system
        for _ in range(3):
            r = rhs.copy()
            r[:d] -= p.H @ sol[:d] + E.T @ sol[d:]
            r[d:] -= E @ sol[:d]
            sol += scipy.linalg.lu_solve(lu, r, check_finite=False)
        z_pol = sol[:d]
        y_pol = np.zeros(p.n_constraints)
        y_pol[active] = sol[d:]
        _, _, _, res_pol = _kkt_parts(p, z_pol, y_pol)
        _, _, _, res_adm = _kkt_parts(p, z, y)
        if np.all(np.isfinite(z_pol)) and res_pol < res_adm:
            return z_pol, y_pol
        return z, y


def solve_qp(p: QProblem, warm_start=None, warm_duals=None, max_iters: int = 4000,
             workspace: QPWorkspace | None = None) -> QPSolution:
    """Solve a dense convex QP; see QPWorkspace for the reusable-state path."""
    if workspace is None:
        workspace = QPWorkspace(p.H, p.C, p.lb, p.ub)
    return workspace.solve(p.g, p.lb, p.ub, warm_start=warm_start,
                           warm_duals=warm_duals, max_iters=max_iters)
