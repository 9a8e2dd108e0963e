import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pqla.errors import ConfigurationError
from pqla.penalties import (
    PenaltySpec,
    SupportPartition,
    penalized_objective,
    penalty_value,
    verify_conditions,
)
from pqla.quasi_likelihood import QuadraticObjective, RateSpec

THETA_STAR = (0.0, 1.0, 0.0, 1.0, 2.0, 0.0, 1.0, 1.0, 1.0, 0.0)
N_GRID = (1000, 2000, 3000, 10000)


# --- support partition ----------------------------------------------------------------


def test_partition_from_theta():
    part = SupportPartition.from_theta(THETA_STAR)
    assert part.zero_set == (0, 2, 5, 9)
    assert part.nonzero_set == (1, 3, 4, 6, 7, 8)
    assert part == SupportPartition.from_zero_indices([0, 2, 5, 9], 10)
    np.testing.assert_array_equal(part.part1(THETA_STAR), [1, 1, 2, 1, 1, 1])
    A = np.arange(100.0).reshape(10, 10)
    assert part.block(A, 0, 1).shape == (4, 6)
    assert part.block(A, 1, 1)[0, 0] == A[1, 1]


# --- penalty values ---------------------------------------------------------------------


def test_penalty_zero_at_origin():
    assert penalty_value(PenaltySpec(), 10_000, np.zeros(10)) == 0.0


def test_unit_weight_penalty():
    spec = PenaltySpec(weights_override=(1.0,))
    assert penalty_value(spec, 1, [1.0] + [0.0] * 9) == 1.0


def test_default_weights_at_ten_thousand():
    xi = PenaltySpec().weights(10_000, 10)
    np.testing.assert_allclose(xi, 21.544346900318832, rtol=1e-14)
    theta = np.zeros(10)
    theta[0] = 0.5
    assert penalty_value(PenaltySpec(), 10_000, theta) == pytest.approx(17.499447397714007, rel=1e-12)


def test_weight_rules():
    rates = RateSpec()
    n = 10_000
    np.testing.assert_allclose(PenaltySpec(weights_rule="|alpha|^{-q'}").weights(n, 2, rates), 100 ** (2 / 3))
    np.testing.assert_allclose(PenaltySpec.lasso().weights(n, 2, rates), 100.0)
    clamped = PenaltySpec(weights_rule="|alpha|^{-q'}", clamp=True, c0=0.1)
    np.testing.assert_allclose(clamped.weights(n, 2, rates), 10.0)


def test_invalid_penalties():
    with pytest.raises(ConfigurationError):
        PenaltySpec(weights_rule="sqrt(n)")
    with pytest.raises(ConfigurationError):
        PenaltySpec(q=0.7, q_prime=0.5)
    with pytest.raises(ConfigurationError):
        PenaltySpec(kind="scad")
    with pytest.raises(ConfigurationError):
        PenaltySpec(q=0.0)


def test_penalized_objective_decomposes():
    obj = QuadraticObjective([1.0, 2.0], n=100)
    theta = np.array([0.5, -1.0])
    spec = PenaltySpec()
    expected = obj.value(theta) - penalty_value(spec, 100, theta)
    assert penalized_objective(obj, spec, theta) == pytest.approx(expected, rel=1e-15)
    assert penalized_objective(obj, spec.with_weights([0.0, 0.0]), theta) == obj.value(theta)


@given(st.floats(0.01, 100.0), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_penalty_homogeneous_of_degree_q(t, theta):
    spec = PenaltySpec(weights_override=(1.0, 2.0, 0.5))
    theta = np.array(theta)
    base = penalty_value(spec, 1, theta)
    assert penalty_value(spec, 1, t * theta) == pytest.approx(t ** spec.q * base, rel=1e-10, abs=1e-300)


@given(st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_unit_penalty_monotone_in_absolute_value(a, b):
    spec = PenaltySpec()
    lo, hi = sorted((a, b))
    assert spec.unit(lo) <= spec.unit(hi)
    assert spec.unit(-hi) == spec.unit(hi)


def test_unit_derivative():
    spec = PenaltySpec()
    assert spec.unit_derivative(1.0) == pytest.approx(0.3)
    assert spec.unit_derivative(-2.0) == pytest.approx(-0.3 * 2 ** -0.7)


# --- conditions -----------------------------------------------------------------------------


def default_report():
    return verify_conditions(PenaltySpec(), RateSpec(), N_GRID, SupportPartition.from_theta(THETA_STAR), THETA_STAR)


def test_default_configuration_passes_all_conditions():
    report = default_report()
    for name in ("A2", "A3", "A4", "A5", "A6", "A11"):
        assert report.passed(name), name


def test_default_configuration_exponents():
    report = default_report()
    assert report.results["A6"].exponent == pytest.approx([-0.6111111111111112] * 4, abs=1e-12)
    assert report.results["A4"].exponent == pytest.approx([-1 / 6] * 6, abs=1e-12)
    assert set(report.beta.values()) == {0.0}
    assert set(report.psi.values()) == {0.0}
    seq = np.array(report.results["A6"].sequence)
    assert np.all(np.diff(seq[:, 0]) < 0)


def test_lasso_fails_a6_only_through_a6():
    report = verify_conditions(PenaltySpec.lasso(), RateSpec(), N_GRID,
                               SupportPartition.from_theta(THETA_STAR), THETA_STAR)
    assert not report.passed("A6")
    for name in ("A2", "A3", "A4", "A5"):
        assert report.passed(name), name
    np.testing.assert_allclose(report.results["A6"].sequence, 1.0)
    assert report.results["A6"].limit == [1.0] * 4


def test_bridge_with_unit_q_prime_has_nonzero_beta():
    spec = PenaltySpec(q_prime=1.0)
    report = verify_conditions(spec, RateSpec(), N_GRID, SupportPartition.from_theta(THETA_STAR), THETA_STAR)
    assert report.passed("A6") and report.passed("A11")
    assert set(report.beta.values()) == {1.0}
    assert report.psi[4] == pytest.approx(0.3 * 2 ** -0.7)
    assert report.psi[1] == pytest.approx(0.3)


def test_a4_fails_when_weights_outgrow_rates():
    spec = PenaltySpec(weights_rule="|alpha|^{-1}", q=0.3, q_prime=2 / 3)
    rates = RateSpec(exponent=0.5)
    report = verify_conditions(spec, rates, N_GRID, SupportPartition.from_theta(THETA_STAR))
    assert report.passed("A4") is (1.0 <= spec.c0)
    small_c0 = PenaltySpec(weights_rule="|alpha|^{-1}", c0=0.5)
    assert not verify_conditions(small_c0, rates, N_GRID, SupportPartition.from_theta(THETA_STAR)).passed("A4")


def test_conditions_reject_unsorted_grid_and_overrides():
    part = SupportPartition.from_theta(THETA_STAR)
    with pytest.raises(ConfigurationError):
        verify_conditions(PenaltySpec(), RateSpec(), (2000, 1000), part)
    with pytest.raises(ConfigurationError):
        verify_conditions(PenaltySpec(weights_override=(1.0,)), RateSpec(), N_GRID, part)


def test_report_serializes():
    doc = default_report().to_dict()
    assert doc["conditions"]["A6"]["passed"] is True
    assert doc["beta"]["1"] == 0.0
