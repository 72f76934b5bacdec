import math

import numpy as np
import pytest

from latentflow.oracle import OracleField, delta_target
from latentflow.sampler import (
    TimeGrid,
    deviation_sequence,
    discretization_error_curve,
    euler_flow,
    gronwall_holds,
    loglog_slope,
    make_grid,
    reference_flow,
    rk4,
    stopping_time,
)
from latentflow.tensor import ContractError


def constant(c):
    return lambda x, t: np.broadcast_to(c, x.shape).copy()


class TestGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(0.9, 3)
        np.testing.assert_allclose(g.knots, [0, 0.3, 0.6, 0.9])
        assert g.steps == 3 and g.max_step == pytest.approx(0.3)

    def test_must_start_at_zero(self):
        with pytest.raises(ContractError):
            TimeGrid(np.array([0.1, 0.5]))

    def test_must_increase(self):
        with pytest.raises(ContractError):
            TimeGrid(np.array([0.0, 0.5, 0.5]))

    def test_stopping_time(self):
        assert stopping_time(2) == 0.5
        assert stopping_time(10**6) == 0.5
        assert stopping_time(10**300) == pytest.approx(1 - (300 * math.log(10)) ** (-1 / 6))

    def test_stopping_time_nondecreasing(self):
        values = [stopping_time(n) for n in (2, 10, 10**3, 10**6, 10**12)]
        assert values == sorted(values)

    @pytest.mark.parametrize("n, dim", [(64, 1), (1024, 2), (4096, 3)])
    def test_make_grid_step(self, n, dim):
        g = make_grid(n, dim, horizon=0.9)
        assert g.max_step <= n ** (-1 / (dim + 3)) * (1 + 1e-12)
        assert g.horizon == pytest.approx(0.9)

    def test_make_grid_default_horizon(self):
        assert make_grid(256, 1).horizon == pytest.approx(stopping_time(256))

    def test_make_grid_requires_samples(self):
        with pytest.raises(ContractError):
            make_grid(1, 1)


class TestEuler:
    def test_constant_field_is_exact(self):
        g = TimeGrid.uniform(0.8, 7)
        traj = euler_flow(constant(np.array([1.0, -2.0])), g, np.zeros((3, 2)))
        np.testing.assert_allclose(traj.terminal, np.tile([0.8, -1.6], (3, 1)), rtol=1e-14)

    def test_single_step(self):
        f = lambda x, t: -x
        traj = euler_flow(f, TimeGrid.uniform(0.5, 1), np.array([[2.0]]))
        assert traj.terminal[0, 0] == 1.0

    def test_states_shape(self):
        traj = euler_flow(constant(0.0), TimeGrid.uniform(0.5, 4), np.zeros((6, 2)))
        assert traj.states.shape == (5, 6, 2)

    def test_horizon_limit(self):
        f = OracleField(delta_target([0.5]), 0.8)
        with pytest.raises(ContractError):
            euler_flow(f, TimeGrid.uniform(0.9, 10), np.zeros((2, 1)))

    def test_write_csv(self, tmp_path):
        traj = euler_flow(constant(1.0), TimeGrid.uniform(0.5, 2), np.zeros((2, 1)))
        traj.write_csv(tmp_path / "traj.csv")
        lines = (tmp_path / "traj.csv").read_text().splitlines()
        assert lines[0] == "knot,t,point,x0" and len(lines) == 1 + 3 * 2


class TestReference:
    def test_linear_ode(self):
        f = lambda x, t: -x
        out = reference_flow(f, 1.0 - 1e-9, np.array([[1.0], [2.0]]))
        np.testing.assert_allclose(out[:, 0], [math.exp(-1), 2 * math.exp(-1)], rtol=1e-7)

    def test_rk4_order(self):
        f = lambda x, t: np.cos(t)[:, None] * x
        exact = math.exp(math.sin(0.9))
        e1 = abs(rk4(f, 0.9, np.ones((1, 1)), 8)[0, 0] - exact)
        e2 = abs(rk4(f, 0.9, np.ones((1, 1)), 16)[0, 0] - exact)
        assert 12 < e1 / e2 < 20

    def test_tol_positive(self):
        with pytest.raises(ContractError):
            reference_flow(constant(0.0), 0.5, np.zeros((1, 1)), tol=0.0)


class TestErrorCurve:
    def test_first_order_slope(self):
        f = OracleField(delta_target([0.3]), 0.9)
        starts = np.random.default_rng(0).standard_normal((200, 1))
        pts = discretization_error_curve(f, 0.9, starts, [8, 16, 32, 64, 128])
        slope = loglog_slope([p.steps for p in pts], [p.w2_coupling for p in pts])
        assert -1.3 <= slope <= -0.7
        assert all(p.w2_exact <= p.w2_coupling + 1e-12 for p in pts)

    def test_slope_of_power_law(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        assert loglog_slope(x, 3 * x**-2) == pytest.approx(-2.0)

    def test_slope_needs_two_points(self):
        with pytest.raises(ContractError):
            loglog_slope([1.0], [1.0])


class TestGronwall:
    def test_recursion_satisfies_bound(self):
        rng = np.random.default_rng(1)
        alpha, dt = 2.0, 0.01
        g = rng.uniform(0, 1, size=100)
        f = [0.3]
        for k in range(99):
            f.append((1 + alpha * dt) * f[-1] + dt * g[k])
        assert gronwall_holds(f, g, alpha, dt)

    def test_violation_detected(self):
        f = [0.0, 1.0, 2.0]
        assert not gronwall_holds(f, [0.0, 0.0, 0.0], 1.0, 0.1)

    def test_euler_deviation_on_delta_field(self):
        a = np.array([0.3])
        T = 0.9
        field = OracleField(delta_target(a), T)
        grid = TimeGrid.uniform(T, 50)
        starts = np.random.default_rng(2).standard_normal((100, 1))
        exact = lambda t: t * a + math.sqrt(1 - t * t) * starts
        dev = deviation_sequence(field, grid, starts, exact)
        assert dev[0] == 0.0
        # Lipschitz constant of v* in x and a bound on the local truncation error per unit time
        alpha = T / (1 - T * T)
        dt = grid.max_step
        local = np.array([dt * 10 / (1 - T * T) ** 2 * (1 + np.abs(starts).max())] * len(dev))
        assert gronwall_holds(dev, local, alpha, dt)
