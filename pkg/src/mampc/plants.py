"""Benchmark plants: continuous dynamics, RK4 stepping, and linearization.

Four models are built in: an inverted torque-limited pendulum, a triple
pendulum (point masses at the link ends, assembled numerically from the
Lagrangian), a planar bicopter, and a 12-state quadcopter. All use a 0.1 s
sampling interval and are regulated about an equilibrium (upright position
for the pendulums, hover for the copters).

Conventions:
  * A plant's ``dynamics(x, u)`` returns the continuous-time derivative.
  * ``step`` advances one sampling interval with fixed-step RK4 and wraps
    the listed angle coordinates to [-pi, pi).
  * Copter equilibria have nonzero hover input ``u_eq``; controllers act on
    deviation inputs u - u_eq.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sets import Box

GRAVITY = 9.8

_TWO_PI = 2.0 * np.pi


class PlantError(Exception):
    pass


class IntegrationBlowUp(PlantError):
    """RK4 step produced a non-finite state."""


class LinearizationError(PlantError):
    """Finite-difference Jacobian is non-finite or pathologically conditioned."""


def wrap_angle(a):
    """Wrap an angle (or array of angles) to [-pi, pi)."""
    return np.mod(a + np.pi, _TWO_PI) - np.pi


@dataclass(frozen=True)
class Plant:
    """Continuous-time plant with constraint boxes and an equilibrium pair."""

    name: str
    n: int
    m: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    x_eq: np.ndarray
    u_eq: np.ndarray
    state_box: Box
    input_box: Box
    dt: float
    angle_indices: tuple[int, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x_eq", np.asarray(self.x_eq, dtype=float))
        object.__setattr__(self, "u_eq", np.asarray(self.u_eq, dtype=float))
        if self.dt <= 0:
            raise ValueError(f"sampling interval must be positive, got {self.dt}")
        if self.x_eq.shape != (self.n,) or self.u_eq.shape != (self.m,):
            raise ValueError("equilibrium dimensions do not match plant dimensions")
        if self.state_box.dim != self.n or self.input_box.dim != self.m:
            raise ValueError("constraint box dimensions do not match plant dimensions")

    def wrap_state(self, x: np.ndarray) -> np.ndarray:
        if not self.angle_indices:
            return x
        x = np.array(x, dtype=float, copy=True)
        idx = list(self.angle_indices)
        x[idx] = wrap_angle(x[idx])
        return x


def eval_dynamics(plant: Plant, x, u) -> np.ndarray:
    """Continuous-time derivative xdot = f(x, u)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (plant.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({plant.n},)")
    if u.shape != (plant.m,):
        raise ValueError(f"input has shape {u.shape}, expected ({plant.m},)")
    return plant.dynamics(x, u)


def step(plant: Plant, x, u) -> np.ndarray:
    """Advance one sampling interval with fixed-step RK4; wraps angles."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    f = plant.dynamics
    dt = plant.dt
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationBlowUp(
            f"non-finite state after RK4 step of plant '{plant.name}' from x={x}, u={u}"
        )
    return plant.wrap_state(x_next)


def euler_step(plant: Plant, x, u) -> np.ndarray:
    """One forward-Euler step at the plant sampling interval; wraps angles.

    Used by the hybrid dispatcher's forward verification, where speed matters
    more than integration accuracy; the accuracy gap relative to RK4 is
    absorbed by set erosion.
    """
    x_next = x + plant.dt * plant.dynamics(x, u)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationBlowUp(
            f"non-finite state after Euler step of plant '{plant.name}'"
        )
    return plant.wrap_state(x_next)


def linearize_continuous(plant: Plant, fd_step: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians (A_c, B_c) of the dynamics at the equilibrium.

    Central finite differences with a per-coordinate step scaled by the
    magnitude of the equilibrium value.
    """
    n, m = plant.n, plant.m
    x0, u0 = plant.x_eq, plant.u_eq
    A = np.empty((n, n))
    B = np.empty((n, m))
    for j in range(n):
        h = fd_step * max(1.0, abs(x0[j]))
        e = np.zeros(n)
        e[j] = h
        A[:, j] = (plant.dynamics(x0 + e, u0) - plant.dynamics(x0 - e, u0)) / (2.0 * h)
    for j in range(m):
        h = fd_step * max(1.0, abs(u0[j]))
        e = np.zeros(m)
        e[j] = h
        B[:, j] = (plant.dynamics(x0, u0 + e) - plant.dynamics(x0, u0 - e)) / (2.0 * h)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise LinearizationError(f"non-finite Jacobian entries for plant '{plant.name}'")
    cond = np.linalg.cond(np.hstack([A, B]))
    if cond > 1e14:
        raise LinearizationError(
            f"ill-conditioned Jacobian for plant '{plant.name}': condition estimate {cond:.3e}"
        )
    return A, B


def zoh_discretize(A: np.ndarray, B: np.ndarray, dt: float,
                   tol: float = 1e-12, max_terms: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via a truncated exponential series.

    Computes G = sum_k A^k dt^(k+1) / (k+1)!; then A_d = I + A G, B_d = G B.
    The series is truncated once the last term falls below ``tol`` relative
    to the accumulated sum. Handles singular A (integrator chains).
    """
    n = A.shape[0]
    term = dt * np.eye(n)
    G = term.copy()
    Adt = A * dt
    for k in range(1, max_terms):
        term = term @ Adt / (k + 1.0)
        G += term
        if np.max(np.abs(term)) <= tol * max(1.0, np.max(np.abs(G))):
            break
    else:
        raise LinearizationError("zero-order-hold series did not converge")
    return np.eye(n) + A @ G, G @ B


def linearize_discrete(plant: Plant) -> tuple[np.ndarray, np.ndarray]:
    """Discrete linearization (A_d, B_d) about the equilibrium at dt."""
    A, B = linearize_continuous(plant)
    return zoh_discretize(A, B, plant.dt)


@dataclass(frozen=True)
class ConstraintViolation:
    kind: str  # "state" or "input"
    index: int
    value: float
    bound: float
    side: str  # "lower" or "upper"

    @property
    def excess(self) -> float:
        return abs(self.value - self.bound)


@dataclass(frozen=True)
class ConstraintReport:
    violations: tuple[ConstraintViolation, ...]

    @property
    def admissible(self) -> bool:
        return not self.violations


def check_constraints(plant: Plant, x, u) -> ConstraintReport:
    """Per-coordinate report of state-box and input-box violations."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (plant.n,) or u.shape != (plant.m,):
        raise ValueError("state/input dimensions do not match plant")
    out = []
    for kind, vec, box in (("state", x, plant.state_box), ("input", u, plant.input_box)):
        for j in range(box.dim):
            if vec[j] < box.lower[j]:
                out.append(ConstraintViolation(kind, j, float(vec[j]), float(box.lower[j]), "lower"))
            elif vec[j] > box.upper[j]:
                out.append(ConstraintViolation(kind, j, float(vec[j]), float(box.upper[j]), "upper"))
    return ConstraintReport(tuple(out))


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

def _pendulum(dt: float, overrides: dict) -> Plant:
    """Torque-limited pendulum regulated at the upright position.

    State [theta, theta_dot] with theta the clockwise displacement from
    upright; thetaddot = (3g / 2l) sin(theta) + 3 / (m l^2) u.
    """
    p = {"m": 0.1, "l": 0.1, "g": GRAVITY}
    p.update(overrides)
    m, l, g = p["m"], p["l"], p["g"]
    c_grav = 3.0 * g / (2.0 * l)
    c_torque = 3.0 / (m * l * l)

    def dynamics(x, u):
        return np.array([x[1], c_grav * np.sin(x[0]) + c_torque * u[0]])

    return Plant(
        name="pendulum", n=2, m=1, dynamics=dynamics,
        x_eq=np.zeros(2), u_eq=np.zeros(1),
        state_box=Box([-np.pi, -12.0], [np.pi, 12.0]),
        input_box=Box([-0.05], [0.05]),
        dt=dt, angle_indices=(0,), params=p,
    )


def _triple_pendulum(dt: float, overrides: dict) -> Plant:
    """Triple pendulum with a torque actuator at each joint, upright equilibrium.

    Each link is a point mass at its far end (the paper's link centers of
    mass coincide with the next joint). State is interleaved
    [th1, th1d, th2, th2d, th3, th3d] with counterclockwise relative angles.
    The link-end positions are

        p_i = sum_{j<=i} l_j [cos a_j, sin a_j],
        a_1 = pi/2 - th1,  a_2 = a_1 + th2,  a_3 = a_2 + th3,

    and the equations of motion are assembled numerically from

        M(q) qdd = u - sum_i m_i J_i^T (Jdot_i qd) - dV/dq,

    where J_i = dp_i/dq, M = sum_i m_i J_i^T J_i and V = sum_i m_i g y_i.
    The explicit symbolic form is deliberately avoided; correctness is
    checked by energy conservation in the tests.
    """
    p = {"m1": 0.1, "l1": 0.1, "m2": 0.1, "l2": 0.1, "m3": 0.1, "l3": 0.1, "g": GRAVITY}
    p.update(overrides)
    masses = np.array([p["m1"], p["m2"], p["m3"]])
    lengths = np.array([p["l1"], p["l2"], p["l3"]])
    g = p["g"]
    # Rows: d a_i / d theta for the cumulative angles above.
    coef = np.array([[-1.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [-1.0, 1.0, 1.0]])

    def assemble(x):
        th = x[0::2]
        thd = x[1::2]
        a = 0.5 * np.pi + coef @ th
        ca, sa = np.cos(a), np.sin(a)
        adot = coef @ thd
        M = np.zeros((3, 3))
        bias = np.zeros(3)
        grav = np.zeros(3)
        jx = np.zeros(3)
        jy = np.zeros(3)
        jxd = np.zeros(3)
        jyd = np.zeros(3)
        for i in range(3):
            li = lengths[i]
            jx = jx - li * sa[i] * coef[i]
            jy = jy + li * ca[i] * coef[i]
            jxd = jxd - li * ca[i] * adot[i] * coef[i]
            jyd = jyd - li * sa[i] * adot[i] * coef[i]
            M += masses[i] * (np.outer(jx, jx) + np.outer(jy, jy))
            bias += masses[i] * (jx * (jxd @ thd) + jy * (jyd @ thd))
            grav += masses[i] * g * jy
        return th, thd, M, bias, grav

    def dynamics(x, u):
        _, thd, M, bias, grav = assemble(x)
        qdd = np.linalg.solve(M, u - bias - grav)
        out = np.empty(6)
        out[0::2] = thd
        out[1::2] = qdd
        return out

    return Plant(
        name="triple_pendulum", n=6, m=3, dynamics=dynamics,
        x_eq=np.zeros(6), u_eq=np.zeros(3),
        state_box=Box([-np.pi, -12.0] * 3, [np.pi, 12.0] * 3),
        input_box=Box([-1.0] * 3, [1.0] * 3),
        dt=dt, angle_indices=(0, 2, 4), params=p,
    )


def _bicopter(dt: float, overrides: dict) -> Plant:
    """Planar bicopter hovering at the origin.

    State [x, xd, y, yd, th, thd]; thrusts u1, u2 from the two propellers.
    Hover input is mg/2 per propeller.
    """
    p = {"m": 1.1, "l": 0.21, "I": 0.0196, "g": GRAVITY}
    p.update(overrides)
    m, inertia, g = p["m"], p["I"], p["g"]

    def dynamics(x, u):
        th = x[4]
        total = u[0] + u[1]
        return np.array([
            x[1],
            -(total / m) * np.sin(th),
            x[3],
            (total / m) * np.cos(th) - g,
            x[5],
            (u[0] - u[1]) / inertia,
        ])

    hover = 0.5 * m * g
    return Plant(
        name="bicopter", n=6, m=2, dynamics=dynamics,
        x_eq=np.zeros(6), u_eq=np.array([hover, hover]),
        state_box=Box([-5.0, -8.0, -5.0, -8.0, -np.pi, -12.0],
                      [5.0, 8.0, 5.0, 8.0, np.pi, 12.0]),
        input_box=Box([0.1, 0.1], [9.1572, 9.1572]),
        dt=dt, angle_indices=(4,), params=p,
    )


def _quadcopter(dt: float, overrides: dict) -> Plant:
    """Quadcopter with rotor-speed inputs, hovering at the origin.

    State [x, xd, y, yd, z, zd, phi, phid, theta, thetad, psi, psid] with
    ZYX Euler angles; the four inputs are propeller rotational speeds whose
    squares produce thrust (coefficient b) and drag torque (coefficient d).
    """
    p = {
        "m": 1.1, "l": 0.21, "Ixx": 0.0196, "Iyy": 0.0196, "Izz": 0.0264,
        "Ip": 8.5e-4, "b": 9.29e-5, "d": 1.1e-6, "g": GRAVITY,
    }
    p.update(overrides)
    m, l, g = p["m"], p["l"], p["g"]
    ixx, iyy, izz, ip = p["Ixx"], p["Iyy"], p["Izz"], p["Ip"]
    b, d = p["b"], p["d"]

    def dynamics(x, u):
        phi, phid = x[6], x[7]
        th, thd = x[8], x[9]
        psi, psid = x[10], x[11]
        sq = u * u
        u1 = b * sq.sum()
        u2 = b * (sq[1] - sq[3])
        u3 = b * (sq[2] - sq[0])
        u4 = d * (-sq[0] + sq[1] - sq[2] + sq[3])
        u5 = -u[0] + u[1] - u[2] + u[3]
        cphi, sphi = np.cos(phi), np.sin(phi)
        cth, sth = np.cos(th), np.sin(th)
        cpsi, spsi = np.cos(psi), np.sin(psi)
        return np.array([
            x[1],
            (cphi * sth * cpsi + sphi * spsi) * u1 / m,
            x[3],
            (cphi * sth * spsi - sphi * cpsi) * u1 / m,
            x[5],
            -g + cphi * cth * u1 / m,
            phid,
            thd * psid * (iyy - izz) / ixx + thd * (ip / ixx) * u5 + (l / ixx) * u2,
            thd,
            phid * psid * (izz - ixx) / iyy - phid * (ip / iyy) * u5 + (l / iyy) * u3,
            psid,
            phid * thd * (ixx - iyy) / izz + u4 / izz,
        ])

    hover = np.sqrt(m * g / (4.0 * b))
    lo = np.array([-5.0, -8.0] * 3 + [-np.pi, -12.0] * 3)
    hi = -lo
    return Plant(
        name="quadcopter", n=12, m=4, dynamics=dynamics,
        x_eq=np.zeros(12), u_eq=np.full(4, hover),
        state_box=Box(lo, hi),
        input_box=Box(np.zeros(4), np.full(4, 313.96)),
        dt=dt, angle_indices=(6, 8, 10), params=p,
    )


def mechanical_energy(plant: Plant, x) -> float:
    """Total mechanical energy for the unforced pendulum models.

    Used by conservation checks: a frictionless pendulum integrated with
    u = 0 must hold this constant.
    """
    x = np.asarray(x, dtype=float)
    p = plant.params
    if plant.name == "pendulum":
        # Uniform rod pivoted at one end, center of mass at l/2.
        m, l, g = p["m"], p["l"], p["g"]
        return m * l * l * x[1] ** 2 / 6.0 + 0.5 * m * g * l * np.cos(x[0])
    if plant.name == "triple_pendulum":
        masses = np.array([p["m1"], p["m2"], p["m3"]])
        lengths = np.array([p["l1"], p["l2"], p["l3"]])
        g = p["g"]
        coef = np.array([[-1.0, 0.0, 0.0], [-1.0, 1.0, 0.0], [-1.0, 1.0, 1.0]])
        th, thd = x[0::2], x[1::2]
        a = 0.5 * np.pi + coef @ th
        ca, sa = np.cos(a), np.sin(a)
        total = 0.0
        jx = np.zeros(3)
        jy = np.zeros(3)
        y = 0.0
        for i in range(3):
            li = lengths[i]
            jx = jx - li * sa[i] * coef[i]
            jy = jy + li * ca[i] * coef[i]
            y += li * sa[i]
            total += 0.5 * masses[i] * ((jx @ thd) ** 2 + (jy @ thd) ** 2)
            total += masses[i] * g * y
        return float(total)
    raise ValueError(f"no energy formula for plant '{plant.name}'")


_BUILDERS = {
    "pendulum": _pendulum,
    "triple_pendulum": _triple_pendulum,
    "bicopter": _bicopter,
    "quadcopter": _quadcopter,
}


def builtin_plant(name: str, dt: float = 0.1, **overrides) -> Plant:
    """Construct one of the built-in benchmark plants by name.

    Physical parameters may be overridden by keyword (e.g. ``m=0.2``);
    state boxes are generous defaults since the benchmark models bound only
    the inputs.
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(
            f"unknown plant '{name}'; valid identifiers: {sorted(_BUILDERS)}"
        ) from None
    return builder(dt, overrides)
