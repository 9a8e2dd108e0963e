"""Gaussian quasi log-likelihood for the volatility parameter and its LAQ pieces.

For observations ``(X_{t_j}, Y_{t_j})`` on a uniform grid with step ``h``

    H_n(theta) = -1/2 sum_j { log det S(X_{t_{j-1}}, theta)
                              + h^{-1} S^{-1}(X_{t_{j-1}}, theta)[(Delta_j Y)^2] }

With scalar ``Y`` and log-variance ``l = log S`` the score and Hessian are

    dH  = -1/2 sum_j (1 - w_j) dl_j
    d2H = -1/2 sum_j { (1 - w_j) d2l_j + w_j dl_j dl_j' },   w_j = h^{-1} e^{-l_j} (Delta_j Y)^2
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigurationError, DomainError, EvaluationError
from .sde_core import Dataset, ModelSpec, PathBundle, validate_dataset


class DegenerateInformationWarning(UserWarning):
    pass


class Objective:
    """Common surface of every contrast ``H`` the optimisers and diagnostics accept.

    Subclasses provide ``n``, ``lower``, ``upper`` and ``evaluate``.
    """

    n: int
    lower: np.ndarray
    upper: np.ndarray
    theta_free = False

    @property
    def p(self) -> int:
        return len(self.lower)

    def evaluate(self, theta, order: int = 2):
        """Return ``(value, score, hessian)``; entries above ``order`` are ``None``."""
        raise NotImplementedError

    def value(self, theta) -> float:
        return self.evaluate(theta, 0)[0]

    def score(self, theta) -> np.ndarray:
        return self.evaluate(theta, 1)[1]

    def hessian(self, theta) -> np.ndarray:
        return self.evaluate(theta, 2)[2]

    def in_box(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def project(self, theta) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)


class QuasiLikelihood(Objective):
    """The quasi log-likelihood of one dataset under one model."""

    def __init__(self, ds: Dataset, model: ModelSpec):
        validate_dataset(ds, p=model.p)
        if ds.d != model.d or ds.m != model.m:
            raise ConfigurationError(
                f"dataset has d={ds.d}, m={ds.m} but model expects d={model.d}, m={model.m}"
            )
        self.model = model
        self.dataset = ds
        self.n = ds.n
        self.h = ds.h
        self.x = ds.X[:-1]
        self.dy2 = ds.increments()[:, 0] ** 2 / self.h
        self.lower = model.lower
        self.upper = model.upper
        self.theta_free = model.volatility.theta_free

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise DomainError(f"theta must have length {self.p}")
        if not np.all(np.isfinite(theta)):
            raise DomainError("theta must be finite")
        return theta

    def evaluate(self, theta, order: int = 2):
        theta = self._check(theta)
        vol = self.model.volatility
        if order == 0:
            l, dl, d2l = vol.log_variance(self.x, theta), None, None
        else:
            l, dl, d2l = vol.derivatives(self.x, theta)
        bad = ~np.isfinite(l)
        if bad.any():
            j = int(np.argmax(bad)) + 1
            raise EvaluationError(f"S(X_t{{j-1}}, theta) is not positive definite at j={j}", index=j)
        with np.errstate(over="ignore"):
            w = self.dy2 * np.exp(-l)
        value = -0.5 * float(np.sum(l + w))
        if not math.isfinite(value):
            j = int(np.argmax(~np.isfinite(w))) + 1
            raise EvaluationError(f"quasi-likelihood overflow at j={j}", index=j)
        if order == 0:
            return value, None, None
        score = -0.5 * ((1.0 - w) @ dl)
        if order == 1:
            return value, score, None
        hess = -0.5 * ((dl.T * w) @ dl)
        if d2l is not None:
            hess -= 0.5 * np.einsum("j,jkl->kl", 1.0 - w, d2l)
        hess = 0.5 * (hess + hess.T)
        return value, score, hess


class QuadraticObjective(Objective):
    """Synthetic ``H(theta) = offset + n b'(theta - c) - n/2 (theta - c)' A (theta - c)``."""

    def __init__(self, center, info=None, n: int = 1, lower=None, upper=None, linear=None, offset=0.0):
        self.center = np.asarray(center, dtype=float)
        p = len(self.center)
        self.info = np.eye(p) if info is None else np.asarray(info, dtype=float)
        self.linear = np.zeros(p) if linear is None else np.asarray(linear, dtype=float)
        self.n = n
        self.offset = offset
        self.lower = np.full(p, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.full(p, np.inf) if upper is None else np.asarray(upper, dtype=float)

    def evaluate(self, theta, order: int = 2):
        z = np.asarray(theta, dtype=float) - self.center
        Az = self.info @ z
        value = self.offset + self.n * float(self.linear @ z) - 0.5 * self.n * float(z @ Az)
        score = self.n * (self.linear - Az) if order >= 1 else None
        hess = -self.n * self.info if order >= 2 else None
        return value, score, hess


def quasi_loglik(ds: Dataset, spec: ModelSpec, theta) -> float:
    return QuasiLikelihood(ds, spec).value(theta)


def quasi_score(ds: Dataset, spec: ModelSpec, theta) -> np.ndarray:
    return QuasiLikelihood(ds, spec).score(theta)


def quasi_hessian(ds: Dataset, spec: ModelSpec, theta) -> np.ndarray:
    return QuasiLikelihood(ds, spec).hessian(theta)


# --------------------------------------------------------------------------
# rates and the LAQ decomposition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RateSpec:
    """Power-law rates ``alpha_n^j = scale_j * n**(-exponent_j)``; the default is ``n**-0.5``."""

    exponent: float | tuple[float, ...] = 0.5
    scale: float | tuple[float, ...] = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0):
            raise ConfigurationError("rate scales must be positive")
        if np.any(np.asarray(self.exponent) <= 0):
            raise ConfigurationError("rate exponents must be positive so that a_n -> 0")

    def alpha(self, n: float, p: int) -> np.ndarray:
        exp = np.broadcast_to(np.asarray(self.exponent, dtype=float), (p,))
        scale = np.broadcast_to(np.asarray(self.scale, dtype=float), (p,))
        return scale * float(n) ** (-exp)

    def exponents(self, p: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.exponent, dtype=float), (p,)).copy()

    def a(self, n: float, p: int) -> np.ndarray:
        return np.diag(self.alpha(n, p))

    def a_tilde(self, n: float, weights, q: float, zero_set) -> np.ndarray:
        """Diagonal with ``weights_j**(-1/q)`` on the zero set and ``alpha_n^j`` elsewhere."""
        weights = np.asarray(weights, dtype=float)
        diag = self.alpha(n, len(weights)).copy()
        zero = np.asarray(zero_set, dtype=bool)
        diag[zero] = weights[zero] ** (-1.0 / q)
        return np.diag(diag)

    def G(self, n: float, weights, q: float, zero_set) -> np.ndarray:
        """``a_n^{-1} A~_n``."""
        p = len(weights)
        return np.diag(self.a_tilde(n, weights, q, zero_set).diagonal() / self.alpha(n, p))


@dataclass(eq=False)
class LaqDecomposition:
    theta_star: np.ndarray
    delta_n: np.ndarray
    gamma_n: np.ndarray
    scaling: np.ndarray
    objective: Objective
    base_value: float
    limit_gamma: np.ndarray | None = None

    def increment(self, u) -> float:
        """``H(theta* + a_n u) - H(theta*)``."""
        u = np.asarray(u, dtype=float)
        if not np.any(u):
            return 0.0
        return self.objective.value(self.theta_star + self.scaling @ u) - self.base_value

    def remainder(self, u) -> float:
        u = np.asarray(u, dtype=float)
        if not np.any(u):
            return 0.0
        gamma = self.gamma_n if self.limit_gamma is None else self.limit_gamma
        return self.increment(u) - float(self.delta_n @ u) + 0.5 * float(u @ gamma @ u)


def laq_decompose(objective: Objective, theta_star, rates: RateSpec | None = None,
                  limit_gamma=None) -> LaqDecomposition:
    """Split ``H(theta* + a_n u) - H(theta*)`` into score, curvature and remainder.

    The remainder uses ``limit_gamma`` (typically ``limit_information``) when
    supplied and the finite-sample ``gamma_n`` otherwise.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    if not objective.in_box(theta_star):
        raise DomainError("theta_star outside the parameter box")
    rates = rates or RateSpec()
    a = rates.a(objective.n, objective.p)
    value, score, hess = objective.evaluate(theta_star)
    gamma = -a @ hess @ a
    gamma = 0.5 * (gamma + gamma.T)
    return LaqDecomposition(
        theta_star=theta_star,
        delta_n=a @ score,
        gamma_n=gamma,
        scaling=a,
        objective=objective,
        base_value=value,
        limit_gamma=None if limit_gamma is None else np.asarray(limit_gamma, dtype=float),
    )


# --------------------------------------------------------------------------
# limit quantities along the fine path
# --------------------------------------------------------------------------


def _fine_left(paths: PathBundle) -> np.ndarray:
    return paths.X_fine[:-1]


def limit_information(paths: PathBundle, spec: ModelSpec, theta_star) -> np.ndarray:
    """Left-endpoint Riemann sum of the asymptotic information Gamma(theta*).

    For scalar observations the integrand ``Tr((dS) S^{-1} (dS) S^{-1})`` is
    ``dl dl'`` with ``l = log S``.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    l, dl, _ = spec.volatility.derivatives(_fine_left(paths), theta_star)
    bad = ~np.isfinite(l)
    if bad.any():
        raise EvaluationError(f"S not positive definite at fine step {int(np.argmax(bad))}",
                              index=int(np.argmax(bad)))
    T = paths.fine_step * (paths.X_fine.shape[0] - 1)
    gamma = (dl.T @ dl) * paths.fine_step / (2.0 * T)
    gamma = 0.5 * (gamma + gamma.T)
    eig = np.linalg.eigvalsh(gamma)
    if eig[0] < 1e-10 * max(eig[-1], 0.0) or eig[-1] <= 0:
        warnings.warn("asymptotic information is degenerate", DegenerateInformationWarning, stacklevel=2)
    return gamma


def limit_contrast(paths: PathBundle, spec: ModelSpec, theta_star, theta) -> float:
    """Riemann sum of the limiting contrast Y(theta); always <= 0."""
    x = _fine_left(paths)
    theta = np.asarray(theta, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    diff = spec.volatility.log_variance(x, theta) - spec.volatility.log_variance(x, theta_star)
    # log(det S/det S*) + Tr(S^{-1} S* - I) for scalar S
    integrand = diff + np.expm1(-diff)
    T = paths.fine_step * (paths.X_fine.shape[0] - 1)
    return -float(np.sum(integrand)) * paths.fine_step / (2.0 * T)


def chi0_estimate(paths: PathBundle, spec: ModelSpec, theta_star, budget: int = 20,
                  seed: int | None = 0, sweeps: int = 3) -> float:
    """Estimate inf_{theta != theta*} -Y(theta) / |theta - theta*|^2 over the closed box.

    Random multistart followed by coordinate-wise bounded scalar minimisation.
    The result is an upper bound on the true infimum.
    """
    if budget < 1:
        raise ConfigurationError("budget must be at least 1")
    theta_star = np.asarray(theta_star, dtype=float)
    lower, upper = spec.lower, spec.upper
    rng = np.random.default_rng(seed)

    def quotient(theta):
        dist2 = float(np.sum((theta - theta_star) ** 2))
        if dist2 < 1e-16:
            return math.inf
        return -limit_contrast(paths, spec, theta_star, theta) / dist2

    best = math.inf
    for _ in range(budget):
        theta = rng.uniform(lower, upper)
        value = quotient(theta)
        for _ in range(sweeps):
            for k in range(spec.p):
                def along(t, k=k, theta=theta):
                    trial = theta.copy()
                    trial[k] = t
                    return quotient(trial)

                res = minimize_scalar(along, bounds=(lower[k], upper[k]), method="bounded",
                                      options={"xatol": 1e-6})
                if res.fun < value:
                    theta[k] = res.x
                    value = res.fun
        best = min(best, value)
    return max(best, 0.0)
