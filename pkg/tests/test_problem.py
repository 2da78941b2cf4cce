import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _problems import scalar_problem
from entropic_control.errors import ParameterError, PreconditionError, StructuralError
from entropic_control.problem import (
    ControlBox,
    ControlProblem,
    CostSpec,
    DistributionSpec,
    DynamicsSpec,
    HvacParams,
    TimeGrid,
    build_hvac_instance,
    eval_cost_rate,
    eval_drift,
    validate_problem,
)


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    np.testing.assert_allclose(np.diff(g.times), 0.25)
    with pytest.raises(ParameterError):
        TimeGrid(1.0, 0)
    with pytest.raises(ParameterError):
        TimeGrid(0.0, 4)


def test_box_rejects_inverted_bounds():
    with pytest.raises(ParameterError):
        ControlBox([1.0], [0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
def test_box_projection_idempotent(v):
    box = ControlBox([-1.0, 0.0, 2.0], [1.0, 0.5, 3.0])
    v = np.array([v])
    once = box.project(v)
    np.testing.assert_array_equal(box.project(once), once)
    assert box.contains(once).all()
    inside = box.sample(np.random.default_rng(0), 10)
    np.testing.assert_array_equal(box.project(inside), inside)


def test_hvac_validates():
    report = validate_problem(build_hvac_instance())
    assert report.passed, str(report)
    assert len(report.checks) >= 5


def test_negative_cost_fails_validation():
    p = scalar_problem(running=lambda t, x, u: u[:, 0])
    report = validate_problem(p)
    assert "running_cost_nonnegative" in report.failures()


def test_degenerate_diffusion_fails_validation():
    p = scalar_problem(sigma=0.0)
    assert "ellipticity" in validate_problem(p).failures()


def test_dimension_mismatch_names_component():
    dyn = DynamicsSpec(drift=lambda t, x, u: x, diffusion=np.eye(2), state_dim=2, b_max=1.0, c_sigma=1.0)
    cost = CostSpec(running=lambda t, x, u: np.zeros(len(x)), f_max=1.0)
    with pytest.raises(StructuralError, match="initial"):
        ControlProblem(TimeGrid(1, 1), ControlBox([0], [1]), dyn, cost, DistributionSpec.dirac([0.0]))
    with pytest.raises(StructuralError, match="diffusion"):
        DynamicsSpec(drift=lambda t, x, u: x, diffusion=np.eye(3), state_dim=2, b_max=1.0, c_sigma=1.0)


def test_validation_catches_bad_drift_shape():
    p = scalar_problem(drift=lambda t, x, u: np.zeros((len(x), 3)))
    with pytest.raises(StructuralError, match="drift"):
        validate_problem(p)


def _hvac1(**kw):
    base = dict(d=1, theta=1.0, x_out=30.0, kappa=10.0, p_max=1.0, sigma=0.5, mu=21.0, nu=1.0,
                x_min=18.0, x_max=24.0, gamma=1.0, lam=1.0)
    base.update(kw)
    return build_hvac_instance(HvacParams(**base))


def test_hvac_drift_equilibrium():
    p = build_hvac_instance()
    x = np.full((1, 5), 30.0)
    np.testing.assert_array_equal(eval_drift(p, 0.3, x, np.zeros((1, 5))), np.zeros((1, 5)))


def test_hvac_drift_hand_substitution():
    p = _hvac1()
    assert eval_drift(p, 0.0, [25.0], [0.5])[0] == pytest.approx(0.0, abs=1e-12)


def test_hvac_cost_direct_substitution():
    p = _hvac1(C=0.0, lam=0.0, gamma=1.0)
    assert eval_cost_rate(p, 0.7, [21.0], [0.5]) == pytest.approx(0.25)


def test_hvac_cost_perfect_tracking():
    p = _hvac1(C=1.0, lam=0.0, gamma=0.0, r_start=0.5, r_end=0.5)
    assert eval_cost_rate(p, 1.0, [21.0], [0.5]) == pytest.approx(0.0, abs=1e-15)


def test_hvac_comfort_penalty_and_ramp():
    hp = HvacParams()
    assert hp.rho.sum() == pytest.approx(1.0)
    assert hp.target_profile(0.0) == pytest.approx(0.3)
    assert hp.target_profile(hp.horizon) == pytest.approx(0.7)
    p = _hvac1(C=0.0, gamma=0.0, lam=2.0)
    assert eval_cost_rate(p, 0.0, [26.0], [0.0]) == pytest.approx(2.0 * 4.0)
    assert eval_cost_rate(p, 0.0, [17.0], [0.0]) == pytest.approx(2.0 * 1.0)


def test_eval_is_deterministic_and_checks_box():
    p = build_hvac_instance()
    x = np.random.default_rng(1).normal(21, 1, (7, 5))
    u = np.full((7, 5), 0.4)
    a, b = eval_drift(p, 0.5, x, u), eval_drift(p, 0.5, x, u)
    assert a.tobytes() == b.tobytes()
    assert eval_cost_rate(p, 0.5, x, u).tobytes() == eval_cost_rate(p, 0.5, x, u).tobytes()
    with pytest.raises(PreconditionError):
        eval_drift(p, 0.5, x, np.full((7, 5), 1.5))
    with pytest.raises(PreconditionError):
        eval_cost_rate(p, 0.5, x, np.full((7, 5), -0.1))


def test_hvac_build_is_deterministic():
    p1, p2 = build_hvac_instance(), build_hvac_instance()
    x = np.full((3, 5), 22.0)
    u = np.full((3, 5), 0.3)
    assert p1.dynamics.drift(0.1, x, u).tobytes() == p2.dynamics.drift(0.1, x, u).tobytes()
    assert p1.grid == p2.grid
    assert p1.box.dim == 5 and p1.constraint.kind == "terminal_law"


def test_hvac_rejects_bad_params():
    with pytest.raises(ParameterError):
        HvacParams(theta=(0.0,) * 5)
    with pytest.raises(ParameterError):
        HvacParams(C=-1.0)


def test_distribution_spec():
    with pytest.raises(ParameterError):
        DistributionSpec.gaussian([0.0], [0.0])
    with pytest.raises(ParameterError):
        DistributionSpec.empirical(np.empty((0, 1)))
    g = DistributionSpec.gaussian([1.0, 2.0], [4.0, 1.0])
    x = np.array([[1.0, 2.0]])
    assert g.logpdf(x)[0] == pytest.approx(-np.log(2 * np.pi) - 0.5 * np.log(4.0))
    with pytest.raises(PreconditionError):
        DistributionSpec.dirac([0.0]).logpdf(x[:, :1])
