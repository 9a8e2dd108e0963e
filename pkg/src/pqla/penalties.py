"""Bridge and Lasso penalties ``p_n(theta) = sum_j xi_n^j |theta_j|^q``.

Weights follow one of three rules:

``"n^{q'/2}"``      xi_n^j = n^{q'/2}
``"|alpha|^{-q'}"`` xi_n^j = |alpha_n^j|^{-q'}
``"|alpha|^{-1}"``  xi_n^j = |alpha_n^j|^{-1}     (the adaptive Lasso choice)

With power-law rates every sequence that enters the conditions on the
penalty is itself a power of ``n``, so ``verify_conditions`` decides each
condition from the exponent and reports the evaluated sequence alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .quasi_likelihood import Objective, RateSpec

WEIGHT_RULES = ("n^{q'/2}", "|alpha|^{-q'}", "|alpha|^{-1}")
_EXP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SupportPartition:
    """Split of ``{0..p-1}`` into the zero set J0 and its complement J1."""

    zero_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "zero_mask", np.asarray(self.zero_mask, dtype=bool).copy())

    @classmethod
    def from_theta(cls, theta) -> SupportPartition:
        return cls(np.asarray(theta, dtype=float) == 0.0)

    @classmethod
    def from_zero_indices(cls, indices, p: int) -> SupportPartition:
        mask = np.zeros(p, dtype=bool)
        mask[list(indices)] = True
        return cls(mask)

    @property
    def p(self) -> int:
        return len(self.zero_mask)

    @property
    def nonzero_mask(self) -> np.ndarray:
        return ~self.zero_mask

    @property
    def zero_set(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.zero_mask))

    @property
    def nonzero_set(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(~self.zero_mask))

    def part0(self, x):
        return np.asarray(x)[self.zero_mask]

    def part1(self, x):
        return np.asarray(x)[~self.zero_mask]

    def block(self, A, k: int, l: int):
        rows = self.zero_mask if k == 0 else ~self.zero_mask
        cols = self.zero_mask if l == 0 else ~self.zero_mask
        return np.asarray(A)[np.ix_(rows, cols)]

    def __eq__(self, other):
        return isinstance(other, SupportPartition) and np.array_equal(self.zero_mask, other.zero_mask)


@dataclass(frozen=True)
class PenaltySpec:
    kind: str = "bridge"
    q: float = 0.3
    q_prime: float = 2.0 / 3.0
    weights_rule: str = "n^{q'/2}"
    lambda_: float = 1.0
    c0: float = 10.0
    clamp: bool = False
    weights_override: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("bridge", "lasso"):
            raise ConfigurationError(f"unknown penalty kind {self.kind!r}")
        if not 0 < self.q <= 1:
            raise ConfigurationError("q must lie in (0, 1]")
        if self.kind == "lasso" and self.q != 1:
            raise ConfigurationError("the Lasso penalty has q = 1")
        if self.kind == "bridge" and not self.q < self.q_prime <= 1:
            raise ConfigurationError("bridge penalty needs q < q' <= 1")
        if self.weights_rule not in WEIGHT_RULES:
            raise ConfigurationError(f"unknown weights rule {self.weights_rule!r}")
        if self.lambda_ <= 0 or self.c0 <= 0:
            raise ConfigurationError("lambda and c0 must be positive")

    @classmethod
    def lasso(cls, **kwargs) -> PenaltySpec:
        return cls(kind="lasso", q=1.0, q_prime=1.0, weights_rule="|alpha|^{-1}", **kwargs)

    def with_weights(self, weights) -> PenaltySpec:
        return PenaltySpec(self.kind, self.q, self.q_prime, self.weights_rule, self.lambda_,
                           self.c0, self.clamp, tuple(float(w) for w in weights))

    def _raw_exponent(self, rate_exp: np.ndarray) -> np.ndarray:
        """Exponent ``e`` with ``xi_n^j ~ n^e`` before clamping."""
        if self.weights_rule == "n^{q'/2}":
            return np.full_like(rate_exp, self.q_prime / 2)
        if self.weights_rule == "|alpha|^{-q'}":
            return rate_exp * self.q_prime
        return rate_exp.copy()

    def _raw_coefficient(self, rates: RateSpec, p: int) -> np.ndarray:
        scale = rates.alpha(1.0, p)
        if self.weights_rule == "n^{q'/2}":
            return np.ones(p)
        if self.weights_rule == "|alpha|^{-q'}":
            return scale ** (-self.q_prime)
        return 1.0 / scale

    def weights(self, n: float, p: int, rates: RateSpec | None = None) -> np.ndarray:
        if self.weights_override is not None:
            w = np.asarray(self.weights_override, dtype=float)
            return np.broadcast_to(w, (p,)).copy()
        rates = rates or RateSpec()
        alpha = rates.alpha(n, p)
        if self.weights_rule == "n^{q'/2}":
            xi = np.full(p, float(n) ** (self.q_prime / 2))
        elif self.weights_rule == "|alpha|^{-q'}":
            xi = alpha ** (-self.q_prime)
        else:
            xi = 1.0 / alpha
        if self.clamp:
            xi = np.minimum(xi, self.c0 / alpha)
        return xi

    def exponent_and_coefficient(self, rates: RateSpec, p: int):
        """Asymptotic form ``xi_n^j ~ coef_j * n^{exp_j}`` (after the optional clamp)."""
        a = rates.exponents(p)
        e = self._raw_exponent(a)
        c = self._raw_coefficient(rates, p)
        if self.clamp:
            cap_c = self.c0 / rates.alpha(1.0, p)
            higher = e > a + _EXP_TOL
            tie = np.abs(e - a) <= _EXP_TOL
            c = np.where(higher, cap_c, np.where(tie, np.minimum(c, cap_c), c))
            e = np.minimum(e, a)
        return e, c

    def unit(self, x):
        """The unweighted penalty ``p(x) = lambda |x|^q``."""
        return self.lambda_ * np.abs(x) ** self.q

    def unit_derivative(self, x):
        """``p'(x)`` for ``x != 0``."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return self.lambda_ * self.q * np.sign(x) * np.abs(x) ** (self.q - 1)


def penalty_value(spec: PenaltySpec, n: float, theta, rates: RateSpec | None = None) -> float:
    theta = np.asarray(theta, dtype=float)
    return float(np.sum(spec.weights(n, len(theta), rates) * spec.unit(theta)))


def penalized_objective(objective: Objective, spec: PenaltySpec, theta,
                        rates: RateSpec | None = None) -> float:
    """``H(theta) - p_n(theta)``."""
    return objective.value(theta) - penalty_value(spec, objective.n, theta, rates)


# --------------------------------------------------------------------------
# conditions on the penalty
# --------------------------------------------------------------------------


@dataclass
class ConditionResult:
    name: str
    passed: bool
    note: str = ""
    sequence: list[list[float]] | None = None
    exponent: list[float] | None = None
    limit: list[float] | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass
class ConditionReport:
    n_grid: list[float]
    results: dict[str, ConditionResult]
    beta: dict[int, float]
    psi: dict[int, float] | None = None

    def passed(self, name: str) -> bool:
        return self.results[name].passed

    def to_dict(self) -> dict:
        return {
            "n_grid": self.n_grid,
            "conditions": {k: v.to_dict() for k, v in self.results.items()},
            "beta": {str(k): v for k, v in self.beta.items()},
            "psi": None if self.psi is None else {str(k): v for k, v in self.psi.items()},
        }


def _power_limit(e: float, c: float) -> float:
    if e < -_EXP_TOL:
        return 0.0
    if abs(e) <= _EXP_TOL:
        return c
    return math.inf


def verify_conditions(spec: PenaltySpec, rates: RateSpec, n_grid, support: SupportPartition,
                      theta_star=None) -> ConditionReport:
    """Evaluate the penalty conditions for power-law rates along ``n_grid``."""
    n_grid = [float(n) for n in n_grid]
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigurationError("n_grid must be increasing")
    if spec.weights_override is not None:
        raise ConfigurationError("conditions are defined for weight rules, not overridden weights")
    p = support.p
    a = rates.exponents(p)
    e_xi, c_xi = spec.exponent_and_coefficient(rates, p)
    scale = rates.alpha(1.0, p)
    xi_grid = np.array([spec.weights(n, p, rates) for n in n_grid])
    alpha_grid = np.array([rates.alpha(n, p) for n in n_grid])
    J0 = support.zero_set
    J1 = support.nonzero_set
    results = {}

    results["A2"] = ConditionResult("A2", True, "p(x) = lambda|x|^q is differentiable on x != 0")
    results["A3"] = ConditionResult("A3", True, f"sup_{{|x|<1}} p(x) = {spec.lambda_:g} < inf")

    # A4: sup_n |alpha_n^j xi_n^j| <= c0 on J1
    prod = alpha_grid * xi_grid
    e4 = e_xi - a
    seq4 = prod[:, list(J1)]
    lim4 = [_power_limit(e4[j], c_xi[j] * scale[j]) for j in J1]
    ok4 = all(e4[j] <= _EXP_TOL for j in J1) and bool(np.all(seq4 <= spec.c0 * (1 + 1e-12)))
    results["A4"] = ConditionResult("A4", ok4, f"sup |alpha xi| <= c0 = {spec.c0:g} on J1",
                                    seq4.tolist(), [float(e4[j]) for j in J1], lim4)

    # A5: p(x)/|x|^q -> lambda
    xs = 10.0 ** -np.arange(1, 9)
    ratios = spec.unit(xs) / xs ** spec.q
    results["A5"] = ConditionResult("A5", spec.lambda_ > 0 and bool(np.allclose(ratios, spec.lambda_)),
                                    f"lambda = {spec.lambda_:g}", [ratios.tolist()], None, [spec.lambda_])

    # A6: xi^{-1/q} |alpha|^{-1} -> 0 on J0
    seq6 = (xi_grid ** (-1.0 / spec.q) / alpha_grid)[:, list(J0)]
    e6 = -e_xi / spec.q + a
    lim6 = [_power_limit(e6[j], c_xi[j] ** (-1 / spec.q) / scale[j]) for j in J0]
    ok6 = all(e6[j] < -_EXP_TOL for j in J0)
    results["A6"] = ConditionResult("A6", ok6, "xi^{-1/q}/alpha -> 0 on J0",
                                    seq6.tolist(), [float(e6[j]) for j in J0], lim6)

    # A11: xi alpha -> beta on J1
    beta = {j: _power_limit(e4[j], c_xi[j] * scale[j]) for j in J1}
    ok11 = all(math.isfinite(b) for b in beta.values())
    results["A11"] = ConditionResult("A11", ok11, "xi alpha -> beta_j on J1",
                                     seq4.tolist(), [float(e4[j]) for j in J1], list(beta.values()))

    psi = None
    if theta_star is not None:
        theta_star = np.asarray(theta_star, dtype=float)
        psi = {j: float(beta[j] * spec.unit_derivative(theta_star[j])) for j in J1}
    return ConditionReport(n_grid, results, beta, psi)
