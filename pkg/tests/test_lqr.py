import numpy as np
import pytest

from mampc import plants
from mampc.lqr import (
    DAREError,
    LQRSolution,
    build_lqr,
    dare_residual,
    lqr_gain,
    solve_dare,
    spectral_radius,
    validate_roa_ball,
)
from mampc.sets import Box, NormBall

GOLDEN = (1 + np.sqrt(5)) / 2


def double_integrator(dt=0.1):
    return plants.Plant(
        name="double_integrator", n=2, m=1,
        dynamics=lambda x, u: np.array([x[1], u[0]]),
        x_eq=np.zeros(2), u_eq=np.zeros(1),
        state_box=Box.unbounded(2), input_box=Box([-5.0], [5.0]), dt=dt,
    )


class TestSolveDare:
    def test_scalar_one_step_decay(self):
        P = solve_dare([[0.0]], [[1.0]], [[1.0]], [[1.0]])
        np.testing.assert_allclose(P, [[1.0]], atol=1e-9)

    def test_scalar_golden_ratio(self):
        # P solves P = 1 + P - P^2/(1+P)  =>  P^2 = P + 1
        P = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        assert abs(P[0, 0] - GOLDEN) <= 1e-9

    def test_residual_all_plants(self):
        for name in ("pendulum", "triple_pendulum", "bicopter", "quadcopter"):
            p = plants.builtin_plant(name)
            Ad, Bd = plants.linearize_discrete(p)
            P = solve_dare(Ad, Bd, np.eye(p.n), np.eye(p.m))
            assert dare_residual(P, Ad, Bd, np.eye(p.n), np.eye(p.m)) <= 1e-8
            assert np.max(np.abs(P - P.T)) < 1e-12
            assert np.all(np.linalg.eigvalsh(P) > -1e-10)

    def test_non_stabilizable_raises(self):
        with pytest.raises(DAREError):
            solve_dare([[2.0]], [[0.0]], [[1.0]], [[1.0]])


class TestLQRGain:
    def test_scalar_golden_gain(self):
        P = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        K = lqr_gain(P, [[1.0]], [[1.0]], [[1.0]])
        assert abs(K[0, 0] - P[0, 0] / (1 + P[0, 0])) <= 1e-12
        assert abs(K[0, 0] - (GOLDEN - 1)) <= 1e-9

    def test_zero_dynamics_zero_gain(self):
        P = solve_dare([[0.0]], [[1.0]], [[1.0]], [[1.0]])
        K = lqr_gain(P, [[0.0]], [[1.0]], [[1.0]])
        np.testing.assert_allclose(K, [[0.0]], atol=1e-12)

    def test_double_integrator_stable(self):
        di = double_integrator()
        Ad, Bd = plants.linearize_discrete(di)
        P = solve_dare(Ad, Bd, np.eye(2), [[1.0]])
        K = lqr_gain(P, Ad, Bd, [[1.0]])
        assert spectral_radius(Ad - Bd @ K) < 1

    def test_closed_loop_stable_all_plants(self):
        for name in ("pendulum", "triple_pendulum", "bicopter", "quadcopter"):
            p = plants.builtin_plant(name)
            Ad, Bd = plants.linearize_discrete(p)
            P = solve_dare(Ad, Bd, np.eye(p.n), np.eye(p.m))
            K = lqr_gain(P, Ad, Bd, np.eye(p.m))
            assert spectral_radius(Ad - Bd @ K) < 1


class TestBuildLQR:
    def test_assembles_solution(self):
        di = double_integrator()
        Ad, Bd = plants.linearize_discrete(di)
        sol = build_lqr(Ad, Bd, np.eye(2), np.eye(1), roa_radius=1.0)
        assert isinstance(sol, LQRSolution)
        assert sol.spectral_radius_est < 1
        assert sol.roa.radius == 1.0
        np.testing.assert_allclose(sol.control(np.array([1.0, 0.0])), -sol.K[:, 0])


class TestValidateRoA:
    def make_di_gain(self):
        di = double_integrator()
        Ad, Bd = plants.linearize_discrete(di)
        P = solve_dare(Ad, Bd, np.eye(2), [[1.0]])
        return di, lqr_gain(P, Ad, Bd, [[1.0]])

    def test_zero_radius_rejected(self):
        di, K = self.make_di_gain()
        with pytest.raises(ValueError):
            validate_roa_ball(di, K, 0.0, n_samples=10, horizon=10)

    def test_double_integrator_passes(self):
        di, K = self.make_di_gain()
        rep = validate_roa_ball(di, K, 1.0, n_samples=250, horizon=80, seed=0)
        assert rep.passed
        assert rep.worst_terminal_norm <= 0.1
        assert rep.n_boundary == 250

    def test_monotone_ball_property_double_integrator(self):
        di, K = self.make_di_gain()
        full = validate_roa_ball(di, K, 1.0, n_samples=150, horizon=80, seed=3)
        half = validate_roa_ball(di, K, 0.5, n_samples=150, horizon=80, seed=3)
        assert full.passed
        assert half.passed

    def test_pendulum_failure_is_witnessed(self):
        # r = pi is far beyond any basin reachable with +-0.05 Nm torque
        p = plants.builtin_plant("pendulum")
        Ad, Bd = plants.linearize_discrete(p)
        P = solve_dare(Ad, Bd, np.eye(2), [[1.0]])
        K = lqr_gain(P, Ad, Bd, [[1.0]])
        rep = validate_roa_ball(p, K, np.pi, n_samples=100, horizon=100, seed=0)
        assert not rep.passed
        assert rep.n_escaped + rep.n_not_converged > 0
        assert len(rep.witnesses) > 0

    def test_monotone_ball_property_builtin_plants(self):
        # Stated as an implication: every radius that passes must also pass
        # at half radius with the same seed. For the stiff builtin plants no
        # Euclidean ball is one-step invariant at dt=0.1 (transient growth
        # floor), so the report telemetry is checked alongside.
        for name in ("pendulum", "bicopter"):
            p = plants.builtin_plant(name)
            Ad, Bd = plants.linearize_discrete(p)
            P = solve_dare(Ad, Bd, np.eye(p.n), np.eye(p.m))
            K = lqr_gain(P, Ad, Bd, np.eye(p.m))
            for r in (0.5, 0.25):
                rep = validate_roa_ball(p, K, r, n_samples=60, horizon=150, seed=5)
                assert rep.worst_excursion > 0
                if rep.passed:
                    half = validate_roa_ball(p, K, r / 2, n_samples=60, horizon=150, seed=5)
                    assert half.passed

    def test_deterministic_given_seed(self):
        di, K = self.make_di_gain()
        a = validate_roa_ball(di, K, 1.0, n_samples=50, horizon=40, seed=9)
        b = validate_roa_ball(di, K, 1.0, n_samples=50, horizon=40, seed=9)
        assert a.worst_excursion == b.worst_excursion
        assert a.worst_terminal_norm == b.worst_terminal_norm

    def test_report_rows_serializable(self):
        di, K = self.make_di_gain()
        rep = validate_roa_ball(di, K, 1.0, n_samples=20, horizon=80, seed=0)
        rows = dict(rep.rows())
        assert rows["passed"] == 1
        assert rows["radius"] == 1.0
