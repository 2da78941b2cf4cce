from __future__ import annotations

import warnings

import numpy as np
import pytest

from entropic_control.errors import ParameterError, SolverError
from entropic_control.estimate import RegressionConfig
from entropic_control.problem import BridgeParams, LqSpec, build_bridge_instance, build_lq_instance
from entropic_control.simulate import (
    ConstantPolicy,
    PathCostVector,
    accumulate_path_cost,
    simulate_ensemble,
)
from entropic_control.solver import (
    CloudPolicy,
    Iterate,
    SolverConfig,
    diagnostics,
    girsanov_log_ratio,
    reference_lq_solution,
    run_alternating,
    step_p,
    step_q,
)
from entropic_control.twist import WeightVector

from _problems import scalar_problem

J_STAR = 0.21689041522995692  # default LqSpec, RK4 on 100 steps


def _control_problem(running=None, box=(-3.0, 3.0), steps=5):
    return scalar_problem(
        drift=lambda t, x, u: np.broadcast_to(u, x.shape).astype(float, copy=True),
        running=running,
        box=box,
        steps=steps,
        linear=True,
        running_grad=None if running is None else (lambda t, x, u: u.copy()),
    )


def _iterate(p, policy, n=2000, seed=0):
    ens = simulate_ensemble(p, policy, n, seed)
    return Iterate(0, policy, ens, accumulate_path_cost(p, ens))


def _small_lq(**kw):
    lq = LqSpec(steps=20)
    cfg = dict(eps=0.5, n_paths=4000, n_iterations=4, seed=3, regression=RegressionConfig(k=200))
    cfg.update(kw)
    return lq, build_lq_instance(lq), SolverConfig(**cfg)


# --- configuration ---------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(eps=0.0), dict(eps=-1.0), dict(n_paths=99), dict(n_iterations=0),
                                dict(mvi_solver="newton")])
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        SolverConfig(**kw)


def test_default_ess_floor():
    assert SolverConfig(n_paths=5000).floor == 50.0
    assert SolverConfig(n_paths=5000, ess_floor=7.0).floor == 7.0


# --- step_q ----------------------------------------------------------------


def test_step_q_two_path_fixture():
    p = _control_problem()
    ens = simulate_ensemble(p, ConstantPolicy([0.0], p.box), 2, 0)
    it = Iterate(0, None, ens, PathCostVector(np.array([0.0, 1.0])))
    w = step_q(it, p, SolverConfig(eps=1.0, n_paths=100)).weights.w
    np.testing.assert_allclose(w, [0.731059, 0.268941], atol=1e-6)


def test_step_q_small_eps_is_uniform():
    p = _control_problem(running=lambda t, x, u: x[:, 0] ** 2)
    it = _iterate(p, ConstantPolicy([0.0], p.box), n=500)
    w = step_q(it, p, SolverConfig(eps=1e-10, n_paths=500)).weights.w
    np.testing.assert_allclose(w, 1 / 500, rtol=1e-6)


def test_step_q_inactive_terminal_constraint():
    # target equal to the law of X_T under P^k, no running cost
    p0 = build_bridge_instance(BridgeParams(target_mean=0.0, target_var=1.0, steps=10))
    policy = ConstantPolicy([0.0], p0.box)
    ens = simulate_ensemble(p0, policy, 20_000, 1)
    it = Iterate(0, policy, ens, PathCostVector(np.zeros(ens.n_paths)))
    tw = step_q(it, p0, SolverConfig(eps=1.0, n_paths=20_000))
    assert tw.weights.ess > 0.9 * ens.n_paths


# --- step_p ----------------------------------------------------------------


def test_step_p_quadratic_closed_form():
    # b = u, sigma = 1, f = u^2 / 2, drift field = delta0 everywhere
    eps, delta0 = 1.0, 0.8
    p = _control_problem(running=lambda t, x, u: 0.5 * u[:, 0] ** 2)
    it = _iterate(p, ConstantPolicy([delta0], p.box))
    cfg = SolverConfig(eps=eps, n_paths=2000, regression=RegressionConfig(k=50))
    pol = step_p(it, WeightVector.uniform(2000), p, cfg)
    assert isinstance(pol, CloudPolicy) and pol.representation == "cloud_backed"
    for m in range(p.grid.steps):
        np.testing.assert_allclose(pol.controls(m), delta0 / (1 + eps), atol=1e-6)
    x = np.linspace(-5, 5, 11)[:, None]
    np.testing.assert_allclose(pol(2, x), delta0 / (1 + eps), atol=1e-6)


def test_step_p_fixed_point():
    # f = (u - c)^2 / 2 is minimized by the current control and delta = c
    c = 0.4
    p = scalar_problem(
        drift=lambda t, x, u: np.broadcast_to(u, x.shape).astype(float, copy=True),
        running=lambda t, x, u: 0.5 * (u[:, 0] - c) ** 2,
        box=(-3.0, 3.0), steps=5, linear=True, running_grad=lambda t, x, u: u - c,
    )
    it = _iterate(p, ConstantPolicy([c], p.box))
    pol = step_p(it, WeightVector.uniform(2000), p, SolverConfig(eps=2.0, n_paths=2000))
    for m in range(p.grid.steps):
        np.testing.assert_allclose(pol.controls(m), c, atol=1e-6)


def test_cloud_policy_is_memoized():
    p = _control_problem(running=lambda t, x, u: 0.5 * u[:, 0] ** 2)
    it = _iterate(p, ConstantPolicy([0.5], p.box), n=500)
    pol = step_p(it, WeightVector.uniform(500), p, SolverConfig(eps=1.0, n_paths=500))
    assert pol.controls(0) is pol.controls(0)


# --- diagnostics and the sandwich -----------------------------------------


def test_diagnostics_constant_cost():
    p = _control_problem()
    it = _iterate(p, ConstantPolicy([0.0], p.box), n=300)
    it = Iterate(0, it.policy, it.ensemble, PathCostVector(np.full(300, 2.5)))
    cfg = SolverConfig(eps=1.0, n_paths=300)
    tw = step_q(it, p, cfg)
    rep = diagnostics(it, tw, p, cfg)
    assert rep.J == pytest.approx(2.5)
    assert rep.penalized == pytest.approx(2.5, abs=1e-12)
    assert rep.entropy == pytest.approx(0.0, abs=1e-12)
    assert rep.variance_bound == pytest.approx(0.0, abs=1e-20)


def test_girsanov_log_ratio_vanishes_for_same_controls():
    p = _control_problem()
    ens = simulate_ensemble(p, ConstantPolicy([0.3], p.box), 100, 0)
    np.testing.assert_allclose(girsanov_log_ratio(p, ens, ens.controls), 0.0, atol=1e-12)


def test_girsanov_log_ratio_constant_shift():
    # log dP_old/dP_new for drift a versus b on one path = (a-b) dX - (a^2-b^2) dt / 2 summed
    p = _control_problem(steps=4)
    ens = simulate_ensemble(p, ConstantPolicy([0.3], p.box), 50, 0)
    new = np.full_like(ens.controls, -0.2)
    dx = ens.states[:, -1, 0] - ens.states[:, 0, 0]
    expected = 0.5 * dx - 0.5 * (0.3**2 - 0.2**2) * 1.0
    np.testing.assert_allclose(girsanov_log_ratio(p, ens, new), expected, atol=1e-12)


# --- run_alternating -------------------------------------------------------


def test_zero_cost_single_iteration():
    p = _control_problem(steps=5)
    res = run_alternating(p, SolverConfig(eps=1.0, n_paths=500, n_iterations=1))
    assert len(res.reports) == 1
    np.testing.assert_allclose(res.weights.w, 1 / 500)
    assert res.reports[0].penalized == pytest.approx(0.0, abs=1e-12)
    assert res.reports[0].entropy == pytest.approx(0.0, abs=1e-12)


def test_small_lq_run_invariants():
    _, p, cfg = _small_lq()
    res = run_alternating(p, cfg, J_ref=J_STAR)
    assert len(res.reports) == cfg.n_iterations and not res.aborted
    for r in res.reports:
        assert r.entropy <= cfg.eps * r.penalized + 1e-9
        assert r.penalized == pytest.approx(r.expected_cost_q + r.entropy / cfg.eps, abs=1e-9)
        assert r.admissibility == r.entropy
        assert r.reference_gap == pytest.approx(r.J - J_STAR)
        assert r.sandwich <= r.penalized + 3 * r.penalized_se
    pen, se = res.column("penalized"), res.column("penalized_se")
    assert np.all(pen[1:] <= pen[:-1] + 3 * se[:-1])
    assert set(res.timings) == {"simulate", "cost", "q_step", "p_step", "diagnostics"}


def test_reproducible():
    _, p, cfg = _small_lq(n_iterations=2, n_paths=1000)
    a = run_alternating(p, cfg)
    b = run_alternating(p, cfg)
    assert [r.as_dict() for r in a.reports] == [r.as_dict() for r in b.reports]
    np.testing.assert_array_equal(a.ensemble.states, b.ensemble.states)


def test_fresh_noise_mode():
    _, p, cfg = _small_lq(n_iterations=2, n_paths=1000, common_random_numbers=False)
    res = run_alternating(p, cfg)
    assert res.ensemble.seed == cfg.seed + 1
    crn = run_alternating(p, SolverConfig(**{**cfg.__dict__, "common_random_numbers": True}))
    assert crn.ensemble.seed == cfg.seed
    assert res.reports[1].J != crn.reports[1].J


def test_callback_streams_reports():
    _, p, cfg = _small_lq(n_iterations=2, n_paths=500)
    seen = []
    res = run_alternating(p, cfg, callback=seen.append)
    assert seen == res.reports


def test_ess_abort_returns_partial_result():
    # a floor just below N flags every non-uniform weight vector
    lq = LqSpec(steps=5)
    cfg = SolverConfig(eps=0.5, n_paths=400, n_iterations=6, check_sandwich=False, ess_floor=399.0,
                       regression=RegressionConfig(k=40))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run_alternating(build_lq_instance(lq), cfg)
    assert res.aborted and len(res.reports) == 3
    assert all(r.ess_warning for r in res.reports)
    assert sum(issubclass(w.category, RuntimeWarning) for w in caught) >= 3


def test_errors_carry_iteration_index():
    # a target far outside the reachable set starves the terminal reweighting
    p = build_bridge_instance(BridgeParams(target_mean=60.0, target_var=1e-4, steps=5))
    cfg = SolverConfig(eps=1.0, n_paths=200, n_iterations=2)
    with pytest.raises(SolverError) as exc:
        run_alternating(p, cfg)
    assert exc.value.iteration == 0


# --- LQ reference -----------------------------------------------------------


def test_reference_lq_default():
    ref = reference_lq_solution(LqSpec())
    assert ref.J_star == pytest.approx(J_STAR, abs=1e-12)
    assert ref.self_convergence <= 1e-6
    assert ref.riccati[-1] == 0.0


def test_reference_lq_without_state_cost():
    ref = reference_lq_solution(LqSpec(q=0.0))
    assert ref.J_star == 0.0
    np.testing.assert_array_equal(ref.riccati, 0.0)


def test_reference_lq_short_horizon():
    values = [reference_lq_solution(LqSpec(horizon=h)).J_star for h in (1e-1, 1e-2, 1e-3)]
    assert values[0] > values[1] > values[2] > 0
    assert values[2] < 1e-6


def test_reference_lq_matches_monte_carlo():
    lq = LqSpec()
    ref = reference_lq_solution(lq)
    p = build_lq_instance(lq)
    phi = accumulate_path_cost(p, simulate_ensemble(p, ref.policy, 100_000, 11)).values
    se = phi.std(ddof=1) / np.sqrt(phi.size)
    # Euler time-discretization bias at dt = 0.01 is a few 1e-3
    assert abs(phi.mean() - ref.J_star) <= 3 * se + 5e-3


def test_reference_lq_warns_when_box_binds():
    with pytest.warns(RuntimeWarning):
        reference_lq_solution(LqSpec(q=50.0, u_bound=1.0))
