"""Infinite-horizon discrete LQR and sampling-based region-of-attraction validation.

The Riccati solution is computed by fixed-point iteration of the recursion;
non-convergence doubles as a stabilizability check for the linearized pair.
The region of attraction is an origin-centered Euclidean ball validated by
simulating the true nonlinear plant under the clamped gain from sampled
interior and boundary states.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import plants as _plants
from .plants import Plant
from .sets import NormBall


class DAREError(Exception):
    """Riccati fixed-point iteration failed to converge (non-stabilizable pair)."""


def solve_dare(A, B, Q, R, tol: float = 1e-12, max_iters: int = 100_000) -> np.ndarray:
    """Solve P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA by fixed-point iteration.

    Iterates until the update falls below ``tol``. For stiff linearizations
    the update stalls at a rounding floor above 1e-12 (products of magnitude
    ||A||^2 ||P||); since the update size equals the DARE residual, the
    iteration also accepts a stagnated fixed point once the residual sits
    well inside the 1e-8 contract.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    P = Q.copy()
    best_delta = np.inf
    stagnant = 0
    for _ in range(max_iters):
        BtP = B.T @ P
        K = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ (A - B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        delta = np.max(np.abs(P_next - P))
        if delta <= tol:
            return P_next
        if not np.all(np.isfinite(P_next)):
            break
        if delta < 0.5 * best_delta:
            best_delta = delta
            stagnant = 0
        else:
            stagnant += 1
            if stagnant >= 300 and delta <= 1e-9:
                return P_next
        P = P_next
    raise DAREError(
        "Riccati iteration did not converge; pair (A, B) is likely not stabilizable"
    )


def dare_residual(P, A, B, Q, R) -> float:
    """Infinity-norm residual of the DARE at P."""
    BtP = B.T @ P
    K = np.linalg.solve(R + BtP @ B, BtP @ A)
    return float(np.max(np.abs(P - (Q + A.T @ P @ (A - B @ K)))))


def lqr_gain(P, A, B, R) -> np.ndarray:
    """Feedback gain K = (R + B'PB)^-1 B'PA for the law u = -Kx."""
    B = np.asarray(B, dtype=float)
    BtP = B.T @ P
    return np.linalg.solve(R + BtP @ B, BtP @ np.asarray(A, dtype=float))


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class LQRSolution:
    """Riccati solution, gain, and the validated attraction ball."""

    P: np.ndarray
    K: np.ndarray
    roa: NormBall
    spectral_radius_est: float

    def control(self, dx: np.ndarray) -> np.ndarray:
        """Deviation input -K dx (caller adds the equilibrium input and clamps)."""
        return -(self.K @ dx)


@dataclass(frozen=True)
class RoAValidation:
    """Outcome of the sampling-based region-of-attraction check."""

    passed: bool
    radius: float
    n_samples: int
    n_boundary: int
    horizon: int
    seed: int
    worst_excursion: float       # max ||x|| seen along any trajectory
    worst_terminal_norm: float
    n_escaped: int
    n_not_converged: int
    witnesses: tuple = field(default=())  # first few offending start states

    def rows(self):
        """Flat key/value rows for the roa.csv artifact."""
        return [
            ("passed", int(self.passed)),
            ("radius", self.radius),
            ("n_samples", self.n_samples),
            ("n_boundary", self.n_boundary),
            ("horizon", self.horizon),
            ("seed", self.seed),
            ("worst_excursion", self.worst_excursion),
            ("worst_terminal_norm", self.worst_terminal_norm),
            ("n_escaped", self.n_escaped),
            ("n_not_converged", self.n_not_converged),
        ]


def validate_roa_ball(plant: Plant, K, r: float, n_samples: int, horizon: int,
                      seed: int = 0, terminal_fraction: float = 0.1,
                      max_witnesses: int = 5, contain_tol: float = 1e-9) -> RoAValidation:
    """Check positive invariance and convergence of the ball ||x|| <= r.

    Samples ``n_samples`` states from the ball interior plus the boundary
    sphere at matched count, simulates the true plant under
    u = clamp(-K (x - x_eq) + u_eq), and passes only if every trajectory
    stays inside the ball at every step (up to ``contain_tol``, which only
    absorbs float noise for marginally contractive loops) and ends with
    ||x|| <= r/10.
    """
    if r <= 0:
        raise ValueError(f"ball radius must be positive, got {r}")
    if n_samples < 1 or horizon < 1:
        raise ValueError("n_samples and horizon must be at least 1")
    K = np.asarray(K, dtype=float)
    ball = NormBall(r)
    rng = np.random.default_rng(seed)
    starts = np.vstack([
        ball.sample(rng, plant.n, n_samples),
        ball.sample_sphere(rng, plant.n, n_samples),
    ])
    box = plant.input_box
    worst_exc = 0.0
    worst_term = 0.0
    escaped = 0
    not_converged = 0
    witnesses = []
    for x0 in starts:
        x = plant.x_eq + x0
        bad = False
        for _ in range(horizon):
            u = box.clamp(plant.u_eq - K @ (x - plant.x_eq))
            try:
                x = _plants.step(plant, x, u)
            except _plants.IntegrationBlowUp:
                bad = True
                worst_exc = np.inf
                break
            norm = np.linalg.norm(x - plant.x_eq)
            worst_exc = max(worst_exc, norm)
            if norm > r + contain_tol:
                bad = True
                break
        if bad:
            escaped += 1
            if len(witnesses) < max_witnesses:
                witnesses.append(x0.copy())
            continue
        term = float(np.linalg.norm(x - plant.x_eq))
        worst_term = max(worst_term, term)
        if term > terminal_fraction * r:
            not_converged += 1
            if len(witnesses) < max_witnesses:
                witnesses.append(x0.copy())
    passed = escaped == 0 and not_converged == 0
    return RoAValidation(
        passed=passed, radius=float(r), n_samples=n_samples, n_boundary=n_samples,
        horizon=horizon, seed=seed, worst_excursion=float(worst_exc),
        worst_terminal_norm=float(worst_term), n_escaped=escaped,
        n_not_converged=not_converged, witnesses=tuple(witnesses),
    )


def build_lqr(A_d, B_d, Q, R, roa_radius: float) -> LQRSolution:
    """Assemble an LQRSolution from a discrete linearization and weights.

    The returned ball is declared, not yet validated; run validate_roa_ball
    to check it against the true plant.
    """
    P = solve_dare(A_d, B_d, Q, R)
    K = lqr_gain(P, A_d, B_d, R)
    rho = spectral_radius(np.asarray(A_d) - np.asarray(B_d) @ K)
    if rho >= 1.0:
        raise DAREError(f"closed-loop spectral radius {rho:.6f} is not < 1")
    return LQRSolution(P=P, K=K, roa=NormBall(roa_radius), spectral_radius_est=rho)
