"""Likelihood-ratio random fields and empirical checks of the asymptotic theory.

All estimates here are Monte Carlo quantities.  Suprema over continua are
approximated from below by sampling plus local search, so tail curves and
Hoelder quotients are lower bounds: good for falsifying a claim, not for
certifying it.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression, minimize

from .errors import ConfigurationError, DomainError, EvaluationError
from .optimizer import EstimationResult, penalized_qmle, qmle
from .penalties import PenaltySpec, SupportPartition
from .quasi_likelihood import Objective, QuasiLikelihood, RateSpec, laq_decompose, limit_information
from .sde_core import Dataset


# --------------------------------------------------------------------------
# random fields
# --------------------------------------------------------------------------


def _weights(objective: Objective, penalty: PenaltySpec | None, rates: RateSpec | None):
    return None if penalty is None else penalty.weights(objective.n, objective.p, rates)


def log_field_value(objective: Objective, theta_star, u, rates: RateSpec | None = None,
                    penalty: PenaltySpec | None = None) -> float:
    """``log Z_n(u)``, or ``log Z_n^dagger(u)`` when a penalty is supplied."""
    theta_star = np.asarray(theta_star, dtype=float)
    u = np.asarray(u, dtype=float)
    rates = rates or RateSpec()
    alpha = rates.alpha(objective.n, objective.p)
    theta = theta_star + alpha * u
    if not objective.in_box(theta):
        raise DomainError("u lies outside U_n")
    if not np.any(u):
        return 0.0
    out = objective.value(theta) - objective.value(theta_star)
    xi = _weights(objective, penalty, rates)
    if xi is not None:
        out -= float(np.sum(xi * (penalty.unit(theta) - penalty.unit(theta_star))))
    return out


def field_value(objective: Objective, theta_star, u, rates: RateSpec | None = None,
                penalty: PenaltySpec | None = None) -> float:
    return math.exp(log_field_value(objective, theta_star, u, rates, penalty))


def _u_box(objective: Objective, theta_star, alpha):
    return (objective.lower - theta_star) / alpha, (objective.upper - theta_star) / alpha


def shell_supremum(objective: Objective, theta_star, r: float, rates: RateSpec | None = None,
                   penalty: PenaltySpec | None = None, rng=None, starts: int = 20, probes: int = 200,
                   threshold: float | None = None, center=None) -> float:
    """Lower bound for ``sup_{u in U_n, |u| >= r} log Z(u)``; ``-inf`` for an empty shell.

    Candidates are ``center`` (when it lies in the shell), random probes with
    log-uniform radii, and local maximisations started on the sphere
    ``|u| = r``.  If ``threshold`` is given the search stops as soon as a
    candidate reaches it.
    """
    rng = np.random.default_rng(rng)
    theta_star = np.asarray(theta_star, dtype=float)
    rates = rates or RateSpec()
    p = objective.p
    alpha = rates.alpha(objective.n, p)
    lo, hi = _u_box(objective, theta_star, alpha)
    far = np.maximum(np.abs(lo), np.abs(hi))
    r_max = float(np.linalg.norm(far))
    if r > r_max:
        return -math.inf
    xi = _weights(objective, penalty, rates)
    base = objective.value(theta_star) - (0.0 if xi is None else float(np.sum(xi * penalty.unit(theta_star))))

    def logz(u):
        theta = np.clip(theta_star + alpha * u, objective.lower, objective.upper)
        try:
            v = objective.value(theta)
        except EvaluationError:
            return -math.inf
        if xi is not None:
            v -= float(np.sum(xi * penalty.unit(theta)))
        return v - base

    def grad(u):
        theta = np.clip(theta_star + alpha * u, objective.lower, objective.upper)
        g = objective.score(theta)
        if xi is not None:
            nz = theta != 0
            g = g.copy()
            g[nz] -= xi[nz] * penalty.unit_derivative(theta[nz])
        return alpha * g

    best = -math.inf

    def done():
        return threshold is not None and best >= threshold

    def in_shell(u):
        return np.all(u >= lo) and np.all(u <= hi) and float(u @ u) >= r * r * (1 - 1e-12)

    if center is not None:
        center = np.asarray(center, dtype=float)
        if in_shell(center):
            best = max(best, logz(center))
    if done():
        return best

    def direction():
        v = rng.standard_normal(p)
        return v / np.linalg.norm(v)

    log_r, log_R = math.log(r) if r > 0 else math.log(1e-12), math.log(r_max)
    for _ in range(probes):
        u = math.exp(rng.uniform(log_r, log_R)) * direction()
        if in_shell(u):
            best = max(best, logz(u))
            if done():
                return best

    bounds = list(zip(lo, hi))
    constraint = {"type": "ineq", "fun": lambda u: float(u @ u) - r * r, "jac": lambda u: 2 * u}
    for _ in range(starts):
        u0 = None
        for _ in range(100):
            cand = r * direction()
            if in_shell(cand):
                u0 = cand
                break
        if u0 is None:
            continue
        best = max(best, logz(u0))
        try:
            with warnings.catch_warnings():
                # SLSQP clips its own trial points to the bounds
                warnings.simplefilter("ignore", RuntimeWarning)
                res = minimize(lambda u: -logz(u), u0, jac=lambda u: -grad(u), method="SLSQP",
                               bounds=bounds, constraints=[constraint],
                               options={"maxiter": 100, "ftol": 1e-10})
            u_opt = np.clip(res.x, lo, hi)
        except (ValueError, EvaluationError):
            continue
        if in_shell(u_opt):
            best = max(best, logz(u_opt))
        if done():
            return best
    return best


@dataclass
class TailCurve:
    """Lower-bound tail estimates ``P[sup_{|u|>=r} Z(u) >= exp(-r^(2-eps))]``."""

    r: np.ndarray
    estimate: np.ndarray
    smoothed: np.ndarray
    reps: int
    eps: float
    penalized: bool
    sup_values: np.ndarray | None = None

    @property
    def mc_stderr(self) -> np.ndarray:
        p = self.estimate
        return np.sqrt(p * (1 - p) / self.reps)

    def polynomial_fit(self):
        """Binomial maximum-likelihood fit of ``P = min(1, C r^-L)`` with ``L >= 0``.

        Started from the least-squares line through ``log P`` against ``log r``.
        Returns ``(L, C)``; ``(nan, nan)`` when fewer than two smoothed points are positive.
        """
        mask = self.smoothed > 0
        if mask.sum() < 2:
            return math.nan, math.nan
        x = np.log(self.r)
        slope, intercept = np.polyfit(x[mask], np.log(self.smoothed[mask]), 1)
        if np.all(self.estimate >= 1.0):
            return 0.0, 1.0
        hits = self.estimate * self.reps

        def nll(par):
            log_c, L = par[0], abs(par[1])
            f = np.clip(np.exp(np.minimum(log_c - L * x, 0.0)), 1e-12, 1 - 1e-12)
            return -float(np.sum(hits * np.log(f) + (self.reps - hits) * np.log1p(-f)))

        starts = [(intercept, max(-slope, 0.0)), (0.0, 0.0)]
        best = min((minimize(nll, s, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-10,
                                                                      "maxiter": 4000})
                    for s in starts), key=lambda res: res.fun)
        return float(abs(best.x[1])), float(math.exp(best.x[0]))

    def fitted(self) -> np.ndarray:
        L, C = self.polynomial_fit()
        if math.isnan(L):
            return self.smoothed.copy()
        return np.minimum(C * self.r ** (-L), 1.0)

    def polynomial_deviation(self) -> np.ndarray:
        """``|P_hat - P_fit|`` in units of the binomial standard error at the fitted value.

        The standard error is floored at one count, so exact zeros do not
        produce infinite deviations.
        """
        fit = self.fitted()
        se = np.sqrt(np.maximum(fit * (1 - fit), 1.0 / self.reps) / self.reps)
        return np.abs(self.estimate - fit) / se

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "estimate", "mc_stderr", "smoothed"])
        for row in zip(self.r, self.estimate, self.mc_stderr, self.smoothed):
            w.writerow([format(v, ".10g") for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        L, C = self.polynomial_fit()
        return {"label": "lower-bound tail estimates", "penalized": self.penalized, "eps": self.eps,
                "reps": self.reps, "r": self.r.tolist(), "estimate": self.estimate.tolist(),
                "mc_stderr": self.mc_stderr.tolist(), "smoothed": self.smoothed.tolist(),
                "fit": {"L": L, "C": C}}


def empirical_tail(objectives, theta_star, r_grid, eps: float = 0.5, rates: RateSpec | None = None,
                   penalty: PenaltySpec | None = None, seed: int | None = 0, starts: int = 20,
                   probes: int = 200) -> TailCurve:
    """Tail curve from a sequence of objectives, one per replication."""
    r_grid = np.asarray(sorted(r_grid), dtype=float)
    if np.any(r_grid <= 0):
        raise ConfigurationError("radii must be positive")
    rates = rates or RateSpec()
    sups = []
    hits = []
    for k, obj in enumerate(objectives):
        rng = np.random.default_rng([seed or 0, k])
        alpha = rates.alpha(obj.n, obj.p)
        if penalty is None:
            center = (qmle(obj).theta_hat - theta_star) / alpha
        else:
            center = (penalized_qmle(obj, penalty, None, rates).theta_hat - theta_star) / alpha
        row_s, row_h = [], []
        for r in r_grid:
            thr = -(r ** (2 - eps))
            s = shell_supremum(obj, theta_star, r, rates, penalty, rng, starts, probes,
                               threshold=thr, center=center)
            row_s.append(s)
            row_h.append(s >= thr)
        sups.append(row_s)
        hits.append(row_h)
    if not hits:
        raise ConfigurationError("need at least one replication")
    est = np.mean(np.array(hits, dtype=float), axis=0)
    smooth = isotonic_regression(est, increasing=False).x
    return TailCurve(r_grid, est, np.clip(smooth, 0, 1), len(hits), eps, penalty is not None, np.array(sups))


def pldi_tail_estimate(cfg, r_grid, eps: float = 0.5, reps: int = 200, penalized: bool = True,
                       n: int | None = None, starts: int = 20, probes: int = 200) -> TailCurve:
    """Empirical tail curve of the (penalized) field for the experiment ``cfg`` at one ``n``."""
    from .experiments import simulate_replication

    if cfg.model.p > 3:
        raise ConfigurationError("the tail diagnostic is limited to p <= 3")
    if reps < 50:
        raise ConfigurationError("the tail diagnostic needs at least 50 replications")
    n = cfg.n_grid[0] if n is None else n
    theta_star = np.asarray(cfg.theta_star, dtype=float)

    def objectives():
        for i in range(reps):
            ds, _ = simulate_replication(cfg, n, i)
            yield QuasiLikelihood(ds, cfg.model)

    return empirical_tail(objectives(), theta_star, r_grid, eps, cfg.rates,
                          cfg.penalty if penalized else None, cfg.master_seed, starts, probes)


# --------------------------------------------------------------------------
# Hoelder quotient and moments
# --------------------------------------------------------------------------


def holder_quotient(objective: Objective, theta_star, q: float, M: float, samples: int = 1000,
                    rates: RateSpec | None = None, seed: int | None = 0) -> float:
    """Sampled lower bound of ``sup |H(theta*+a u) - H(theta*+a v)| / |u - v|^q`` over ``|u|,|v| < M``."""
    if M <= 0 or samples < 1:
        raise ConfigurationError("need M > 0 and samples >= 1")
    theta_star = np.asarray(theta_star, dtype=float)
    rates = rates or RateSpec()
    p = objective.p
    alpha = rates.alpha(objective.n, p)
    lo, hi = _u_box(objective, theta_star, alpha)
    rng = np.random.default_rng(seed)

    def ball_point():
        v = rng.standard_normal(p)
        return M * rng.uniform() ** (1.0 / p) * v / np.linalg.norm(v)

    def valid(u):
        return np.all(u >= lo) and np.all(u <= hi) and float(u @ u) < M * M

    best = -math.inf
    for _ in range(samples):
        u, v = ball_point(), ball_point()
        if not (valid(u) and valid(v)) or np.array_equal(u, v):
            continue
        num = abs(objective.value(theta_star + alpha * u) - objective.value(theta_star + alpha * v))
        best = max(best, num / float(np.linalg.norm(u - v)) ** q)
    if best == -math.inf:
        raise DomainError("no admissible pair (u, v) found inside U_n")
    return best


def _as_theta(results) -> np.ndarray:
    rows = [r.theta_hat if isinstance(r, EstimationResult) else r for r in results]
    if not rows:
        raise ConfigurationError("need at least one result")
    return np.asarray(rows, dtype=float)


def moment_estimate(results, theta_star, n: float, m: float, rates: RateSpec | None = None,
                    zero_set: SupportPartition | None = None, psi=None) -> float:
    """Empirical ``E|a_n^{-1}(theta_hat - theta*)|^m``.

    With ``zero_set`` and a scaling matrix ``psi`` the moment of
    ``|psi theta_hat^(0)|`` is returned instead.
    """
    if m <= 0:
        raise ConfigurationError("m must be positive")
    thetas = _as_theta(results)
    theta_star = np.asarray(theta_star, dtype=float)
    if zero_set is not None:
        sub = thetas[:, zero_set.zero_mask]
        psi = np.eye(sub.shape[1]) if psi is None else np.asarray(psi, dtype=float)
        norms = np.linalg.norm(sub @ psi.T, axis=1)
    else:
        alpha = (rates or RateSpec()).alpha(n, thetas.shape[1])
        norms = np.linalg.norm((thetas - theta_star) / alpha, axis=1)
    return float(np.mean(norms ** m))


# --------------------------------------------------------------------------
# limit law of the penalized estimator
# --------------------------------------------------------------------------


@dataclass
class LimitLaw:
    gamma11: np.ndarray
    psi1: np.ndarray
    support: SupportPartition

    def __post_init__(self):
        self.gamma11 = np.asarray(self.gamma11, dtype=float)
        self.psi1 = np.asarray(self.psi1, dtype=float)
        k = len(self.support.nonzero_set)
        if self.gamma11.shape != (k, k) or self.psi1.shape != (k,):
            raise ConfigurationError("gamma11 and psi1 must match the nonzero set")
        if not np.allclose(self.gamma11, self.gamma11.T, rtol=1e-10, atol=0):
            raise ConfigurationError("gamma11 must be symmetric")
        try:
            np.linalg.cholesky(self.gamma11)
        except np.linalg.LinAlgError:
            raise ConfigurationError("gamma11 must be positive definite") from None

    @classmethod
    def from_information(cls, gamma, theta_star, penalty: PenaltySpec, beta) -> LimitLaw:
        support = SupportPartition.from_theta(theta_star)
        J1 = support.nonzero_set
        psi = np.array([beta[j] * float(penalty.unit_derivative(theta_star[j])) for j in J1])
        return cls(support.block(gamma, 1, 1), psi, support)

    @property
    def mean(self) -> np.ndarray:
        return -np.linalg.solve(self.gamma11, self.psi1)

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.gamma11)


def limit_law_sample(law: LimitLaw, count: int, seed: int | None = 0) -> np.ndarray:
    """Draws of the maximiser of the limit field: zero on J0, Gaussian on J1."""
    if count < 1:
        raise ConfigurationError("count must be at least 1")
    rng = np.random.default_rng(seed)
    k = law.gamma11.shape[0]
    L = np.linalg.cholesky(law.gamma11)
    delta = rng.standard_normal((count, k)) @ L.T
    out = np.zeros((count, law.support.p))
    out[:, law.support.nonzero_mask] = np.linalg.solve(law.gamma11, (delta - law.psi1).T).T
    return out


# --------------------------------------------------------------------------
# diagnostic drivers on the experiment
# --------------------------------------------------------------------------


def coarsen(ds: Dataset, step: int) -> Dataset:
    """Every ``step``-th observation of ``ds``."""
    if ds.n % step:
        raise ConfigurationError("step must divide n")
    return Dataset(ds.times[::step], ds.X[::step], ds.Y[::step], dict(ds.provenance, coarsened=step))


@dataclass
class LaqComparison:
    n_small: int
    n_large: int
    sup_small: np.ndarray
    sup_large: np.ndarray
    gamma_error_small: np.ndarray = field(default_factory=lambda: np.array([]))
    gamma_error_large: np.ndarray = field(default_factory=lambda: np.array([]))

    @property
    def fraction_decreased(self) -> float:
        return float(np.mean(self.sup_large < self.sup_small))

    def to_dict(self) -> dict:
        return {"n_small": self.n_small, "n_large": self.n_large,
                "sup_small": self.sup_small.tolist(), "sup_large": self.sup_large.tolist(),
                "fraction_decreased": self.fraction_decreased,
                "median_gamma_error": [float(np.median(self.gamma_error_small)),
                                       float(np.median(self.gamma_error_large))]}


def probe_set(p: int, count: int = 100, radius: float = 2.0, seed: int = 0) -> np.ndarray:
    """Fixed points uniform in the ball of the given radius."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, p))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(size=(count, 1)) ** (1.0 / p)


def laq_remainder_comparison(cfg, n_small: int = 1000, n_large: int = 10000, reps: int = 100,
                             probes: int = 100, radius: float = 2.0) -> LaqComparison:
    """Paired comparison of ``sup_probe |r_n(u)|`` at two sample sizes.

    Each replication simulates one path at ``n_large`` and observes it on the
    coarser grid for ``n_small``, so both remainders share the same limit
    information ``Gamma(theta*)``.
    """
    from .experiments import simulate_replication

    if n_large % n_small:
        raise ConfigurationError("n_small must divide n_large")
    theta_star = np.asarray(cfg.theta_star, dtype=float)
    U = probe_set(cfg.model.p, probes, radius, seed=cfg.master_seed)
    s_small, s_large, e_small, e_large = [], [], [], []
    for i in range(reps):
        ds, paths = simulate_replication(cfg, n_large, i)
        gamma = limit_information(paths, cfg.model, theta_star)
        for data, sups, errs in ((coarsen(ds, n_large // n_small), s_small, e_small), (ds, s_large, e_large)):
            laq = laq_decompose(QuasiLikelihood(data, cfg.model), theta_star, cfg.rates, limit_gamma=gamma)
            sups.append(max(abs(laq.remainder(u)) for u in U))
            errs.append(float(np.linalg.norm(laq.gamma_n - gamma, 2)))
    return LaqComparison(n_small, n_large, np.array(s_small), np.array(s_large),
                         np.array(e_small), np.array(e_large))


def chi0_tail(values, r_grid) -> list[float]:
    """Empirical ``P[chi0 <= 1/r]`` for each ``r``."""
    values = np.asarray(values, dtype=float)
    return [float(np.mean(values <= 1.0 / r)) for r in r_grid]
