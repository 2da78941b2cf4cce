import numpy as np
import pytest

from _problems import double_well_problem, quadratic_box_problem, scalar_problem
from entropic_control.checks import quadratic_problem
from entropic_control.errors import ParameterError, PreconditionError
from entropic_control.mvi import (
    MviQuery,
    control_grid,
    mvi_residual,
    solve_mvi_batch,
    solve_mvi_convex,
    solve_mvi_linear,
)
from entropic_control.problem import build_hvac_instance


def q1(delta, eps=1.0, x=0.0):
    return MviQuery(0.0, np.array([x]), np.array([delta]), eps)


def test_interior_optimum():
    sol = solve_mvi_convex(q1(1.0), quadratic_problem())
    assert sol.u_bar[0] == pytest.approx(0.5, abs=1e-6)
    assert sol.residual >= -1e-6


def test_box_active_optimum():
    sol = solve_mvi_convex(q1(4.0), quadratic_problem())
    assert sol.u_bar[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.residual >= -1e-6


def test_achievable_target_at_cost_minimizer():
    u0 = 0.3
    p = scalar_problem(
        drift=lambda t, x, u: np.broadcast_to(u, x.shape).astype(float, copy=True),
        running=lambda t, x, u: (u[:, 0] - u0) ** 2,
        running_grad=lambda t, x, u: 2 * (u - u0),
        linear=True,
    )
    sol = solve_mvi_convex(q1(u0), p)
    assert sol.u_bar[0] == pytest.approx(u0, abs=1e-7)


def test_residual_detects_violation():
    assert mvi_residual(np.array([-1.0]), q1(1.0), quadratic_problem()) < -0.01


def test_singleton_box_residual_is_zero():
    p = quadratic_problem(0.25, 0.25)
    assert mvi_residual(np.array([0.25]), q1(3.0), p) == 0.0
    assert solve_mvi_convex(q1(3.0), p).u_bar[0] == 0.25


def test_linear_agrees_with_convex_on_quadratic():
    p = quadratic_problem(-2.0, 2.0)
    for delta in (-3.0, -0.4, 0.0, 1.3, 5.0):
        a = solve_mvi_convex(q1(delta, 0.7), p).u_bar
        b = solve_mvi_linear(q1(delta, 0.7), p).u_bar
        np.testing.assert_allclose(a, b, atol=1e-6)


def test_double_well_symmetric():
    a = 1.0
    p = double_well_problem(a)
    sol = solve_mvi_linear(q1(0.0, 1e6), p)
    assert min(abs(sol.u_bar[0] - a), abs(sol.u_bar[0] + a)) < 1e-3
    assert sol.residual >= -1e-6 * (1 + 9)


def test_double_well_tie_broken_toward_target():
    a = 1.0
    sol = solve_mvi_linear(q1(a, 1.0), double_well_problem(a))
    assert sol.u_bar[0] == pytest.approx(a, abs=1e-6)


def test_linear_solver_requires_linear_form():
    with pytest.raises(PreconditionError):
        solve_mvi_linear(MviQuery(0.0, np.full(5, 21.0), np.zeros(5), 5.0), build_hvac_instance())


def test_query_validation():
    with pytest.raises(ParameterError):
        MviQuery(0.0, np.zeros(1), np.array([np.nan]), 1.0)
    with pytest.raises(ParameterError):
        MviQuery(0.0, np.zeros(1), np.zeros(1), 0.0)


def test_eps_limits():
    p = quadratic_problem(-5.0, 5.0)
    # large eps: twist term vanishes, argmin f = 0
    assert abs(solve_mvi_convex(q1(2.0, 1e8), p).u_bar[0]) < 1e-6
    # small eps: the drift is matched
    assert solve_mvi_convex(q1(2.0, 1e-6), p).u_bar[0] == pytest.approx(2.0, abs=1e-5)
    prev = None
    for eps in np.logspace(-3, 3, 13):
        u = solve_mvi_convex(q1(2.0, eps), p).u_bar[0]
        assert u == pytest.approx(2.0 / (1 + eps), abs=1e-6)
        if prev is not None:
            assert u <= prev + 1e-12
        prev = u


def test_deterministic():
    p = build_hvac_instance()
    q = MviQuery(0.3, np.full(5, 22.0), np.full(5, -3.0), 5.0)
    assert solve_mvi_convex(q, p).u_bar.tobytes() == solve_mvi_convex(q, p).u_bar.tobytes()


def test_five_dimensional_certificates():
    p = quadratic_box_problem(5)
    rng = np.random.default_rng(0)
    for _ in range(5):
        q = MviQuery(0.0, np.zeros(5), rng.normal(0, 2, 5), float(rng.uniform(0.2, 5)))
        sol = solve_mvi_convex(q, p, grid_per_dim=11)
        assert p.box.contains(sol.u_bar)
        assert sol.residual >= -1e-4


def test_hvac_batch_matches_single_queries():
    p = build_hvac_instance()
    rng = np.random.default_rng(1)
    x = rng.normal(21, 1, (20, 5))
    delta = rng.normal(-2, 3, (20, 5))
    batch = solve_mvi_batch(p, 0.5, x, delta, 5.0)
    for i in (0, 7, 19):
        single = solve_mvi_convex(MviQuery(0.5, x[i], delta[i], 5.0), p, grid_per_dim=11)
        np.testing.assert_allclose(batch[i], single.u_bar, atol=1e-6)
        assert single.residual >= -1e-4


def test_control_grid_cap():
    p = quadratic_box_problem(5)
    assert control_grid(p, 9).shape == (9**5, 5)
    big = control_grid(p, 101)
    assert big.shape[0] <= 100_000 and p.box.contains(big).all()
