import itertools

import numpy as np
import pytest

from mampc import plants
from mampc.lqr import lqr_gain, solve_dare
from mampc.mpc import (
    MPCController,
    MPCSpec,
    condense,
    feasible_set_member,
    make_mpc_spec,
    mpc_control,
)
from mampc.sets import Box, NormBall


def di_spec(N=2, input_box=None, state_box=None, terminal_ball=None, Qf=None):
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    Q = np.eye(2)
    R = np.eye(1)
    if Qf is None:
        Qf = np.eye(2)
    if input_box is None:
        input_box = Box.unbounded(1)
    return MPCSpec(N=N, Q=Q, R=R, Qf=Qf, A_d=A, B_d=B, input_box=input_box,
                   state_box=state_box, terminal_ball=terminal_ball)


def batch_ls_oracle(spec, x0):
    """Independent batch construction: explicit simulation loop, normal equations."""
    N, n, m = spec.N, spec.n, spec.m
    d = N * m
    # J(U) = sum stage costs via explicit rollout; quadratic in U, so build
    # via evaluation at basis points (no condensing reuse).
    def rollout_cost(U):
        x = x0.copy()
        J = 0.0
        for k in range(N):
            u = U[k * m:(k + 1) * m]
            J += x @ spec.Q @ x + u @ spec.R @ u
            x = spec.A_d @ x + spec.B_d @ u
        return J + x @ spec.Qf @ x

    H = np.zeros((d, d))
    g = np.zeros(d)
    c0 = rollout_cost(np.zeros(d))
    h = 1.0
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        g[i] = (rollout_cost(ei) - rollout_cost(-ei)) / 2
        H[i, i] = rollout_cost(ei) + rollout_cost(-ei) - 2 * c0
    for i in range(d):
        for j in range(i + 1, d):
            eij = np.zeros(d)
            eij[i] = eij[j] = h
            H[i, j] = H[j, i] = (rollout_cost(eij) - c0 - g @ eij
                                 - 0.5 * (H[i, i] + H[j, j]))
    return np.linalg.solve(H, -g)


class TestCondense:
    def test_identity_one_step(self):
        spec = MPCSpec(N=1, Q=np.eye(2), R=np.eye(2), Qf=np.eye(2),
                       A_d=np.eye(2), B_d=np.eye(2), input_box=Box.unbounded(2))
        p = condense(spec, np.zeros(2))
        # H = 2 (B'QfB + R) up to the uniform cost normalization
        assert p.dim == 2
        np.testing.assert_allclose(p.H, p.H[0, 0] * np.eye(2), atol=1e-12)
        np.testing.assert_allclose(p.g, np.zeros(2), atol=1e-12)

    def test_double_integrator_matches_batch_oracle(self):
        spec = di_spec(N=2)
        x0 = np.array([1.0, -0.5])
        U_oracle = batch_ls_oracle(spec, x0)
        res = mpc_control(spec, x0)
        np.testing.assert_allclose(res.predicted_inputs.ravel(), U_oracle, atol=1e-6)

    def test_pendulum_condensed_variable_count(self):
        # 5 inputs after condensing; the uncondensed stacked problem would
        # carry 3 variables per step (theta, theta_dot, u) = 15.
        p = plants.builtin_plant("pendulum")
        spec = make_mpc_spec(p, N=5, Q=np.eye(2), R=np.eye(1))
        qp = condense(spec, np.array([0.1, 0.0]))
        assert qp.dim == 5

    def test_dimension_mismatch(self):
        spec = di_spec()
        with pytest.raises(ValueError):
            condense(spec, np.zeros(3))


class TestMPCControl:
    def test_origin_zero_move(self):
        spec = di_spec(N=4, input_box=Box([-1.0], [1.0]))
        res = mpc_control(spec, np.zeros(2))
        np.testing.assert_allclose(res.u0, [0.0], atol=1e-9)
        assert res.cost == pytest.approx(0.0, abs=1e-12)
        assert res.feasible

    def test_pendulum_saturates_against_grid_oracle(self):
        p = plants.builtin_plant("pendulum")
        spec = make_mpc_spec(p, N=5, Q=np.eye(2), R=np.eye(1))
        x0 = np.array([np.pi / 2, 0.5])
        res = mpc_control(spec, x0)
        assert res.feasible
        assert abs(res.u0[0]) == pytest.approx(0.05, abs=1e-7)

        # oracle: enumerate a fine input grid over the 5-step sequence on the
        # linearized deviation dynamics and take the cheapest sequence
        levels = np.linspace(-0.05, 0.05, 7)
        best_cost, best_first = np.inf, None
        for U in itertools.product(levels, repeat=5):
            x = x0.copy()
            J = 0.0
            for u in U:
                J += x @ spec.Q @ x + u * spec.R[0, 0] * u
                x = spec.A_d @ x + spec.B_d[:, 0] * u
            J += x @ spec.Qf @ x
            if J < best_cost:
                best_cost, best_first = J, U[0]
        assert abs(best_first) == pytest.approx(0.05, abs=1e-12)
        assert np.sign(best_first) == np.sign(res.u0[0])

    def test_one_step_unconstrained_closed_form(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((3, 3))
        B = rng.standard_normal((3, 2))
        Qf = np.diag([2.0, 1.0, 3.0])
        spec = MPCSpec(N=1, Q=np.eye(3), R=np.eye(2), Qf=Qf, A_d=A, B_d=B,
                       input_box=Box.unbounded(2))
        for _ in range(5):
            x = rng.standard_normal(3)
            res = mpc_control(spec, x)
            u_closed = -np.linalg.solve(np.eye(2) + B.T @ Qf @ B, B.T @ Qf @ A @ x)
            np.testing.assert_allclose(res.u0, u_closed, atol=1e-7)

    def test_nonfinite_state_rejected(self):
        spec = di_spec()
        with pytest.raises(ValueError):
            mpc_control(spec, np.array([np.nan, 0.0]))

    def test_infeasible_returns_clamped_fallback(self):
        # terminal ball unreachable in one step with a tiny input box
        spec = di_spec(N=1, input_box=Box([-0.01], [0.01]),
                       terminal_ball=NormBall(0.05))
        res = mpc_control(spec, np.array([5.0, 0.0]))
        assert not res.feasible
        assert res.status == "infeasible"
        assert abs(res.u0[0]) <= 0.01 + 1e-12

    def test_warm_start_independence(self):
        p = plants.builtin_plant("pendulum")
        spec = make_mpc_spec(p, N=5, Q=np.eye(2), R=np.eye(1))
        ctrl = MPCController(spec)
        x = np.array([0.4, -0.2])
        cold = MPCController(spec).control(x, warm=False)
        ctrl.control(np.array([0.3, 0.3]))  # pollute warm state
        warm = ctrl.control(x)
        np.testing.assert_allclose(cold.u0, warm.u0, atol=1e-6)

    def test_predicted_trajectory_consistent(self):
        spec = di_spec(N=3, input_box=Box([-1.0], [1.0]))
        x0 = np.array([0.5, 0.2])
        res = mpc_control(spec, x0)
        x = x0.copy()
        for k in range(spec.N):
            np.testing.assert_allclose(res.predicted_states[k], x, atol=1e-9)
            x = spec.A_d @ x + spec.B_d @ (res.predicted_inputs[k] - spec.u_eq)
        np.testing.assert_allclose(res.predicted_states[-1], x, atol=1e-9)


class TestFeasibleSetMember:
    def test_origin_feasible(self):
        p = plants.builtin_plant("pendulum")
        spec = make_mpc_spec(p, N=5, Q=np.eye(2), R=np.eye(1),
                             terminal_ball=NormBall(0.5))
        assert feasible_set_member(spec, np.zeros(2))

    def test_runaway_velocity_infeasible(self):
        p = plants.builtin_plant("pendulum")
        spec = make_mpc_spec(p, N=5, Q=np.eye(2), R=np.eye(1),
                             terminal_ball=NormBall(0.5))
        assert not feasible_set_member(spec, np.array([0.0, 1e6]))

    def test_terminal_ball_interior_feasible(self):
        # contractive linear test system: zero-input extension stays in ball
        A = 0.5 * np.eye(2)
        B = np.eye(2) * 0.1
        spec = MPCSpec(N=3, Q=np.eye(2), R=np.eye(2), Qf=np.eye(2), A_d=A, B_d=B,
                       input_box=Box([-1, -1], [1, 1]), terminal_ball=NormBall(0.3))
        assert feasible_set_member(spec, np.array([0.2, 0.1]))


class TestInvariants:
    def test_cost_decrease_linearized_closed_loop(self):
        # Qf from the DARE and an invariant terminal region: J* decreases by
        # at least the stage cost along the linearized closed loop.
        A = np.array([[1.0, 0.1], [0.0, 1.0]])
        B = np.array([[0.005], [0.1]])
        Q, R = np.eye(2), np.eye(1)
        P = solve_dare(A, B, Q, R)
        spec = MPCSpec(N=5, Q=Q, R=R, Qf=P, A_d=A, B_d=B,
                       input_box=Box([-5.0], [5.0]))
        ctrl = MPCController(spec)
        x = np.array([0.8, -0.3])
        for _ in range(15):
            res = ctrl.control(x)
            stage = x @ Q @ x + (res.u0 @ R @ res.u0)
            x_next = A @ x + B @ res.u0
            res_next = ctrl.control(x_next)
            assert res_next.cost <= res.cost - stage + 1e-6
            x = x_next

    def test_unconstrained_receding_horizon_equals_lqr(self):
        A = np.array([[1.0, 0.1], [0.0, 1.0]])
        B = np.array([[0.005], [0.1]])
        Q, R = np.eye(2), np.eye(1)
        P = solve_dare(A, B, Q, R)
        K = lqr_gain(P, A, B, R)
        spec = MPCSpec(N=5, Q=Q, R=R, Qf=P, A_d=A, B_d=B,
                       input_box=Box.unbounded(1))
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = 0.1 * rng.standard_normal(2)
            res = mpc_control(spec, x)
            np.testing.assert_allclose(res.u0, -K @ x, atol=1e-6)

    def test_copter_deviation_shift(self):
        # at the hover equilibrium the move is exactly the hover input
        p = plants.builtin_plant("bicopter")
        spec = make_mpc_spec(p, N=4, Q=np.eye(6), R=0.1 * np.eye(2))
        res = mpc_control(spec, np.zeros(6))
        np.testing.assert_allclose(res.u0, p.u_eq, atol=1e-7)
