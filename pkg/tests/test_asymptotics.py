import math

import numpy as np
import pytest

from pqla.asymptotics import (
    LimitLaw,
    TailCurve,
    chi0_tail,
    coarsen,
    empirical_tail,
    field_value,
    holder_quotient,
    limit_law_sample,
    moment_estimate,
    pldi_tail_estimate,
    probe_set,
    shell_supremum,
)
from pqla.errors import ConfigurationError, DomainError
from pqla.experiments import ExperimentConfig, simulate_replication
from pqla.optimizer import EstimationResult
from pqla.penalties import PenaltySpec, SupportPartition
from pqla.quasi_likelihood import Objective, QuadraticObjective, QuasiLikelihood
from pqla.sde_core import ConstantVolatility, ModelSpec, simulate_dataset


def unit_quadratic(p=2, bound=50.0):
    """H with Delta = 0 and Gamma = I at n = 1, so Z(u) = exp(-|u|^2/2)."""
    return QuadraticObjective(np.zeros(p), n=1, lower=[-bound] * p, upper=[bound] * p)


class Scaled(Objective):
    def __init__(self, inner, c):
        self.inner, self.c = inner, c
        self.n, self.lower, self.upper, self.theta_free = inner.n, inner.lower, inner.upper, inner.theta_free

    def evaluate(self, theta, order=2):
        v, g, H = self.inner.evaluate(theta, order)
        return self.c * v, None if g is None else self.c * g, None if H is None else self.c * H


@pytest.fixture(scope="module")
def reduced_objective():
    cfg = ExperimentConfig().reduced(2)
    ds, _ = simulate_replication(cfg, 1000, 0)
    return cfg, QuasiLikelihood(ds, cfg.model)


# --- field values -----------------------------------------------------------------------


def test_field_is_one_at_origin(reduced_objective):
    cfg, obj = reduced_objective
    assert field_value(obj, cfg.theta_star, [0.0, 0.0]) == 1.0
    assert field_value(obj, cfg.theta_star, [0.0, 0.0], cfg.rates, cfg.penalty) == 1.0


def test_quadratic_field_closed_form(rng):
    obj = unit_quadratic()
    for _ in range(10):
        u = rng.normal(size=2) * 3
        assert field_value(obj, [0.0, 0.0], u) == pytest.approx(math.exp(-0.5 * u @ u), rel=1e-12)


def test_penalized_field_on_zero_coordinates(reduced_objective):
    cfg, obj = reduced_objective
    u = np.array([1.7, 0.0])  # moves only the true-zero coordinate
    xi = cfg.penalty.weights(obj.n, 2, cfg.rates)
    step = cfg.rates.alpha(obj.n, 2) * u
    plain = field_value(obj, cfg.theta_star, u)
    pen = field_value(obj, cfg.theta_star, u, cfg.rates, cfg.penalty)
    assert pen == pytest.approx(plain * math.exp(-xi[0] * cfg.penalty.unit(step[0])), rel=1e-12)
    assert pen <= plain


def test_field_outside_parameter_box_rejected(reduced_objective):
    cfg, obj = reduced_objective
    with pytest.raises(DomainError):
        field_value(obj, cfg.theta_star, [1000.0, 0.0])


# --- shell suprema and tail curves --------------------------------------------------------


def test_empty_shell_has_minus_infinite_supremum():
    obj = unit_quadratic(bound=1.0)
    assert shell_supremum(obj, [0.0, 0.0], 2.0, rng=0) == -math.inf


def test_quadratic_shell_supremum_sits_on_inner_sphere():
    obj = unit_quadratic()
    for r in (0.5, 2.0, 7.0):
        assert shell_supremum(obj, [0.0, 0.0], r, rng=1) == pytest.approx(-r * r / 2, abs=1e-6)


def test_quadratic_tail_curve_is_a_step_at_four():
    # exp(-r^2/2) >= exp(-r^1.5) exactly when r <= 4
    objs = [unit_quadratic() for _ in range(3)]
    curve = empirical_tail(objs, [0.0, 0.0], [1.5, 3.0, 3.9, 4.1, 6.0, 20.0, 100.0], eps=0.5)
    np.testing.assert_array_equal(curve.estimate, [1, 1, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(curve.smoothed, curve.estimate)


def test_tail_curve_fit_and_deviation():
    r = np.array([1.0, 2.0, 4.0, 8.0])
    p = 0.8 * r ** -1.5
    curve = TailCurve(r, p, p, 200, 0.5, True)
    L, C = curve.polynomial_fit()
    assert L == pytest.approx(1.5, rel=1e-6)
    assert C == pytest.approx(0.8, rel=1e-6)
    np.testing.assert_allclose(curve.polynomial_deviation(), 0.0, atol=1e-5)
    flat = TailCurve(r, np.zeros(4), np.zeros(4), 200, 0.5, True)
    assert math.isnan(flat.polynomial_fit()[0])
    assert "lower-bound" in curve.to_dict()["label"]
    assert curve.to_csv().splitlines()[0] == "r,estimate,mc_stderr,smoothed"


def test_tail_estimate_guards():
    with pytest.raises(ConfigurationError, match="p <= 3"):
        pldi_tail_estimate(ExperimentConfig(), [1.5, 3.0])
    with pytest.raises(ConfigurationError, match="50"):
        pldi_tail_estimate(ExperimentConfig().reduced(2), [1.5, 3.0], reps=10)


def test_tail_estimates_monotone_and_bounded():
    cfg = ExperimentConfig().reduced(2)
    curve = pldi_tail_estimate(cfg, [1.5, 3.0, 96.0, 200.0, 400.0], reps=50, starts=5, probes=50)
    assert np.all((curve.estimate >= 0) & (curve.estimate <= 1))
    assert np.all(np.diff(curve.smoothed) <= 1e-12)
    assert curve.estimate[-1] == 0.0  # beyond the diameter of U_n


# --- Hoelder quotient ---------------------------------------------------------------------------


def test_holder_quotient_zero_for_theta_free_objective():
    spec = ModelSpec(p=2, d=2, theta_box=((-5, 5),) * 2, volatility=ConstantVolatility(1.0))
    ds, _ = simulate_dataset(spec, [0.0, 0.0], 200, seed=0)
    assert holder_quotient(QuasiLikelihood(ds, spec), [0.0, 0.0], 0.3, 2.0, samples=200) == 0.0


def test_holder_quotient_bounded_by_lipschitz_constant():
    # in u coordinates H is the linear map u -> c'u with |c| = 1
    n = 100
    c = np.array([0.6, 0.8])
    obj = QuadraticObjective([0.0, 0.0], info=np.zeros((2, 2)), n=n, linear=c / math.sqrt(n),
                             lower=[-5, -5], upper=[5, 5])
    est = holder_quotient(obj, [0.0, 0.0], 1.0, 3.0, samples=2000, seed=4)
    assert 0.9 < est <= 1.0 + 1e-12


def test_holder_quotient_scale_covariant(reduced_objective):
    cfg, obj = reduced_objective
    a = holder_quotient(obj, cfg.theta_star, 0.3, 2.0, samples=300, seed=2)
    b = holder_quotient(Scaled(obj, 3.0), cfg.theta_star, 0.3, 2.0, samples=300, seed=2)
    assert a >= 0
    assert b == pytest.approx(3.0 * a, rel=1e-10)


@pytest.mark.slow
def test_holder_product_shrinks_with_n():
    cfg = ExperimentConfig().reduced(2)
    q = cfg.penalty.q
    medians = []
    for n in (1000, 10_000):
        xi = cfg.penalty.weights(n, 2, cfg.rates)
        G = cfg.rates.G(n, xi, q, cfg.support.zero_mask)
        g00 = np.linalg.norm(SupportPartition.from_theta(cfg.theta_star).block(G, 0, 0), 2)
        vals = []
        for index in range(100):
            ds, _ = simulate_replication(cfg, n, index)
            est = holder_quotient(QuasiLikelihood(ds, cfg.model), cfg.theta_star, q, 2.0, samples=300, seed=index)
            vals.append(est * g00 ** q)
        medians.append(np.median(vals))
    assert medians[1] < medians[0]


# --- moments ---------------------------------------------------------------------------------------


def test_moment_of_single_result():
    theta_star = np.array([0.0, 1.0])
    res = EstimationResult(theta_star + 0.1 * np.array([2.0, 0.0]), "qmle", 1, 0.0, 0.0, True)
    assert moment_estimate([res], theta_star, 100, 2) == pytest.approx(4.0, rel=1e-12)


def test_moment_zero_when_estimates_are_exact():
    theta_star = [0.0, 1.0]
    assert moment_estimate([theta_star] * 5, theta_star, 1000, 4) == 0.0


def test_moment_restricted_to_zero_set():
    part = SupportPartition.from_theta([0.0, 1.0])
    val = moment_estimate([[0.5, 1.2], [-0.5, 0.8]], [0.0, 1.0], 100, 2, zero_set=part, psi=[[2.0]])
    assert val == pytest.approx(1.0)


def test_moment_guards():
    with pytest.raises(ConfigurationError):
        moment_estimate([], [0.0], 10, 2)
    with pytest.raises(ConfigurationError):
        moment_estimate([[0.0]], [0.0], 10, 0)


# --- limit law ---------------------------------------------------------------------------------------


def test_identity_limit_law():
    law = LimitLaw(np.eye(2), np.zeros(2), SupportPartition.from_theta([0.0, 1.0, 2.0]))
    draws = limit_law_sample(law, 20_000, seed=1)
    assert np.all(draws[:, 0] == 0.0)
    cov = np.cov(draws[:, 1:].T)
    assert np.linalg.norm(cov - np.eye(2)) < 5 / math.sqrt(20_000)
    np.testing.assert_allclose(draws[:, 1:].mean(axis=0), 0.0, atol=4 / math.sqrt(20_000))


def test_limit_law_mean_with_shift():
    gamma = np.array([[2.0, 0.5], [0.5, 1.0]])
    psi = np.array([0.4, -0.2])
    law = LimitLaw(gamma, psi, SupportPartition.from_theta([1.0, 1.0]))
    count = 50_000
    draws = limit_law_sample(law, count, seed=2)
    expected = -np.linalg.solve(gamma, psi)
    np.testing.assert_allclose(law.mean, expected)
    se = np.sqrt(np.diag(np.linalg.inv(gamma)) / count)
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 4 * se)


def test_limit_law_covariance_coverage():
    gamma = np.array([[2.0, 0.5], [0.5, 1.0]])
    law = LimitLaw(gamma, np.zeros(2), SupportPartition.from_theta([1.0, 1.0]))
    count = 2000
    bound = 5 / math.sqrt(count) * np.linalg.norm(law.covariance, 2)
    hits = [np.linalg.norm(np.cov(limit_law_sample(law, count, seed=s).T) - law.covariance) < bound
            for s in range(100)]
    assert np.mean(hits) >= 0.99


def test_limit_law_determinism_and_guards():
    law = LimitLaw(np.eye(1), np.zeros(1), SupportPartition.from_theta([0.0, 1.0]))
    np.testing.assert_array_equal(limit_law_sample(law, 1, seed=5), limit_law_sample(law, 1, seed=5))
    with pytest.raises(ConfigurationError):
        LimitLaw(np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(2), SupportPartition.from_theta([1.0, 1.0]))
    with pytest.raises(ConfigurationError):
        LimitLaw(np.eye(2), np.zeros(2), SupportPartition.from_theta([0.0, 1.0]))
    with pytest.raises(ConfigurationError):
        limit_law_sample(law, 0)


def test_limit_law_from_information():
    gamma = np.diag([1.0, 2.0, 3.0])
    law = LimitLaw.from_information(gamma, [0.0, 1.0, 2.0], PenaltySpec(), {1: 1.0, 2: 1.0})
    np.testing.assert_array_equal(law.gamma11, np.diag([2.0, 3.0]))
    np.testing.assert_allclose(law.psi1, [0.3, 0.3 * 2 ** -0.7])


# --- helpers ------------------------------------------------------------------------------------------


def test_coarsen_keeps_every_kth_observation():
    cfg = ExperimentConfig().reduced(2)
    ds, _ = simulate_replication(cfg, 100, 0)
    small = coarsen(ds, 10)
    assert small.n == 10
    np.testing.assert_array_equal(small.Y, ds.Y[::10])
    with pytest.raises(ConfigurationError):
        coarsen(ds, 7)


def test_probe_set_inside_ball():
    U = probe_set(3, 100, 2.0, seed=1)
    assert U.shape == (100, 3)
    assert np.all(np.linalg.norm(U, axis=1) <= 2.0)
    np.testing.assert_array_equal(U, probe_set(3, 100, 2.0, seed=1))


def test_chi0_tail():
    assert chi0_tail([0.1, 0.5, 2.0], [1.0, 4.0, 20.0]) == [pytest.approx(2 / 3), pytest.approx(1 / 3), 0.0]


def test_selection_frequency_nondecreasing(default_study):
    cfg = default_study.config
    zero = cfg.support.zero_mask
    rates = []
    for n in cfg.n_grid:
        est = np.array([r.estimates["penalized"] for r in default_study.records if r.n == n and r.ok("penalized")])
        hit = np.all(est[:, zero] == 0.0, axis=1)
        rates.append((hit.mean(), math.sqrt(hit.mean() * (1 - hit.mean()) / len(hit))))
    for (a, _), (b, se) in zip(rates, rates[1:]):
        assert b >= a - max(se, 1 / len(default_study.records))


def test_tail_curve_fit_respects_cap_at_one():
    r = np.array([1.0, 4.0, 16.0, 64.0, 256.0])
    p = np.minimum(1.0, 4.0 * r ** -0.5)
    curve = TailCurve(r, p, p, 200, 0.5, True)
    L, C = curve.polynomial_fit()
    assert L == pytest.approx(0.5, rel=1e-4)
    assert C == pytest.approx(4.0, rel=1e-4)
    assert curve.polynomial_deviation().max() <= 1e-3
    ones = TailCurve(r, np.ones(5), np.ones(5), 200, 0.5, True)
    assert ones.polynomial_fit() == (0.0, 1.0)
