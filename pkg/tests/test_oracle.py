import numpy as np
import pytest

from entropic_control.errors import ParameterError
from entropic_control.oracle import (
    DriftShiftSpec,
    PoissonShiftSpec,
    drift_shift_log_ratio,
    entropy_drift_shift_analytic,
    entropy_mc_drift,
    entropy_mc_poisson,
    entropy_poisson_analytic,
    entropy_weights_drift,
    gaussian_entropy,
    theta,
    theta_lower_bound,
    theta_lower_bound_corrected,
)


def test_drift_shift_analytic():
    assert entropy_drift_shift_analytic(DriftShiftSpec([0.3], [0.3], [[2.0]])) == 0.0
    s = DriftShiftSpec([0.0], [0.5], [[1.0]], 1.0)
    assert entropy_drift_shift_analytic(s) == pytest.approx(0.125, abs=1e-15)
    s2 = DriftShiftSpec([0.0], [0.5], [[1.0]], 2.0)
    assert entropy_drift_shift_analytic(s2) == pytest.approx(2 * 0.125, abs=1e-15)
    aniso = DriftShiftSpec([0.0, 0.0], [1.0, 1.0], np.diag([1.0, 2.0]), 1.0)
    assert entropy_drift_shift_analytic(aniso) == pytest.approx(0.625, abs=1e-15)


def test_poisson_analytic():
    assert entropy_poisson_analytic(PoissonShiftSpec(1.3, 1.3)) == 0.0
    assert entropy_poisson_analytic(PoissonShiftSpec(1.0, 2.0, 1.0)) == pytest.approx(0.386294, abs=1e-6)
    assert entropy_poisson_analytic(PoissonShiftSpec(2.0, 1.0, 1.0)) == pytest.approx(0.306853, abs=1e-6)
    assert entropy_poisson_analytic(PoissonShiftSpec(1.0, 4.0, 0.5)) == pytest.approx(1.272589, abs=1e-6)
    assert PoissonShiftSpec(1.0, 4.0).Y == 0.25


def test_analytic_entropies_nonnegative_on_grid():
    grid = np.linspace(0.1, 5, 15)
    for a in grid:
        for b in grid:
            h = entropy_poisson_analytic(PoissonShiftSpec(a, b, 0.7))
            assert h >= 0 and (h > 0) == (a != b)
    rng = np.random.default_rng(0)
    for _ in range(50):
        b1, b2 = rng.normal(size=2), rng.normal(size=2)
        assert entropy_drift_shift_analytic(DriftShiftSpec(b1, b2, np.eye(2) + 0.3 * rng.normal(size=(2, 2)))) > 0


def test_drift_mc_equal_drifts_is_zero_pathwise():
    s = DriftShiftSpec([0.4, -1.0], [0.4, -1.0], np.diag([1.0, 3.0]))
    lr = drift_shift_log_ratio(s, 1000, 20, seed=0)
    np.testing.assert_allclose(lr, 0.0, atol=1e-12)
    est = entropy_mc_drift(s, 1000, 20, seed=0)
    assert abs(est.estimate) <= 3 * est.se + 1e-12


def test_drift_mc_fixture():
    s = DriftShiftSpec([0.0], [0.5], [[1.0]], 1.0)
    est = entropy_mc_drift(s, 100_000, 200, seed=1)
    assert abs(est.estimate - 0.125) <= 3 * est.se
    assert est.se < 0.003
    assert est.bias_bound == 0.0


def test_drift_mc_anisotropic():
    s = DriftShiftSpec([0.0, 0.0], [1.0, 1.0], np.diag([1.0, 2.0]), 1.0)
    est = entropy_mc_drift(s, 100_000, 50, seed=2)
    assert abs(est.estimate - 0.625) <= 3 * est.se


def test_poisson_mc():
    same = entropy_mc_poisson(PoissonShiftSpec(2.0, 2.0), 1000, seed=0)
    assert same.estimate == 0.0
    for spec in (PoissonShiftSpec(1.0, 2.0, 1.0), PoissonShiftSpec(1.0, 4.0, 0.5)):
        est = entropy_mc_poisson(spec, 100_000, seed=3)
        assert abs(est.estimate - entropy_poisson_analytic(spec)) <= 3 * est.se


def test_weighted_entropy_links_to_twist():
    s = DriftShiftSpec([0.0], [0.5], [[1.0]], 1.0)
    est = entropy_weights_drift(s, 100_000, 20, seed=4)
    assert abs(est.estimate - 0.125) <= 3 * est.se


def test_gaussian_entropy():
    assert gaussian_entropy([0.0, 1.0], [1.0, 2.0], [0.0, 1.0], [1.0, 2.0]) == 0.0
    assert gaussian_entropy(1.0, 1.0, 0.0, 1.0) == pytest.approx(0.5)
    assert gaussian_entropy(0.0, 2.0, 0.0, 1.0) == pytest.approx(0.153426, abs=1e-6)
    with pytest.raises(ParameterError):
        gaussian_entropy(0.0, 0.0, 0.0, 1.0)


def test_theta_lower_bound_off_negative_unit_interval():
    z = np.random.default_rng(5).uniform(-20, 20, 1000)
    keep = ~((z >= -1) & (z < 0))
    assert np.all(theta(z[keep]) >= theta_lower_bound(z[keep]))
    assert np.all(theta(z) >= 0)


def test_theta_stated_bound_counterexample():
    # e^z - z - 1 < z^2 / 2 for every z in [-1, 0)
    z = np.array([-1.0, -0.5, -1e-3])
    assert np.all(theta(z) < theta_lower_bound(z))
    assert theta(-0.5) == pytest.approx(np.exp(-0.5) - 0.5, abs=1e-15)


def test_theta_corrected_bound_everywhere():
    z = np.concatenate([np.random.default_rng(6).uniform(-20, 20, 1000), np.linspace(-1, 1, 201)])
    assert np.all(theta(z) >= theta_lower_bound_corrected(z) - 1e-15)


def test_spec_validation():
    with pytest.raises(ParameterError):
        PoissonShiftSpec(0.0, 1.0)
    with pytest.raises(ParameterError):
        DriftShiftSpec([0.0], [1.0], [[0.0]])
    with pytest.raises(ParameterError):
        DriftShiftSpec([0.0, 1.0], [1.0], np.eye(2))
