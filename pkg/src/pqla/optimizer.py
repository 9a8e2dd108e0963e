"""Estimators: QMLE, penalized QMLE via local quadratic approximation, and QBE."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, EvaluationError, NonIdentifiableError, OptimizationError
from .penalties import PenaltySpec, SupportPartition
from .quasi_likelihood import Objective, RateSpec

__all__ = [
    "EstimationResult",
    "McmcOptions",
    "NewtonOptions",
    "ReducedObjective",
    "SupportPartition",
    "effective_sample_size",
    "penalized_qmle",
    "qbe",
    "qmle",
]


@dataclass
class NewtonOptions:
    max_iter: int = 200
    grad_tol: float = 1e-8
    armijo: float = 1e-4
    step_floor: float = 1e-12
    ridge: float = 1e-8
    # LQA
    tau: float = 1e-4
    step_tol: float = 1e-8
    lqa_max_iter: int = 500
    lqa_grad_tol: float = 1e-6


@dataclass
class McmcOptions:
    iterations: int = 20_000
    burn_in: int = 5_000
    adapt_steps: int = 1_000
    proposal_scale: float = 2.4
    target_acceptance: float = 0.234
    acceptance_bounds: tuple[float, float] = (0.05, 0.95)
    seed: int | None = 0


@dataclass(eq=False)
class EstimationResult:
    theta_hat: np.ndarray
    method: str
    iterations: int
    grad_norm: float
    objective: float
    converged: bool
    wall_time: float = 0.0
    theta_init: np.ndarray | None = None
    message: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def active_set(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.theta_hat != 0.0))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "theta_hat": [float(v) for v in self.theta_hat],
            "active_set": list(self.active_set),
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "objective": self.objective,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "theta_init": None if self.theta_init is None else [float(v) for v in self.theta_init],
            "message": self.message,
            "diagnostics": self.diagnostics,
        }


class ReducedObjective(Objective):
    """Restriction of ``objective`` to the coordinates in ``free_mask``; the rest stay at ``base``."""

    def __init__(self, objective: Objective, free_mask, base=None):
        self.parent = objective
        self.free = np.asarray(free_mask, dtype=bool)
        self.base = np.zeros(objective.p) if base is None else np.asarray(base, dtype=float)
        self.n = objective.n
        self.lower = objective.lower[self.free]
        self.upper = objective.upper[self.free]
        self.theta_free = objective.theta_free

    def embed(self, sub) -> np.ndarray:
        full = self.base.copy()
        full[self.free] = sub
        return full

    def evaluate(self, theta, order: int = 2):
        v, g, H = self.parent.evaluate(self.embed(theta), order)
        return (v,
                None if g is None else g[self.free],
                None if H is None else H[np.ix_(self.free, self.free)])


def _free_coordinates(theta, grad, lower, upper):
    """Coordinates not held by an active bound whose gradient points outward."""
    at_lower = (theta <= lower) & (grad < 0)
    at_upper = (theta >= upper) & (grad > 0)
    return ~(at_lower | at_upper)


def _ridge_newton(hess, grad, ridge0):
    """Solve ``(-hess + mu I) d = grad`` with the smallest ``mu`` in {0, ridge0 * 2^k} that is PD."""
    A = -hess
    mu = 0.0
    eye = np.eye(len(grad))
    for _ in range(200):
        try:
            L = np.linalg.cholesky(A + mu * eye)
        except np.linalg.LinAlgError:
            mu = ridge0 if mu == 0.0 else 2.0 * mu
            continue
        y = np.linalg.solve(L, grad)
        return np.linalg.solve(L.T, y), mu
    raise OptimizationError("could not regularise the Newton system")


def _safe_value(fn, theta):
    try:
        v = fn(theta)
    except EvaluationError:
        return -math.inf
    return v if math.isfinite(v) else -math.inf


def qmle(objective: Objective, theta_init=None, options: NewtonOptions | None = None) -> EstimationResult:
    """Maximise ``H`` over the closed box by projected damped Newton ascent.

    The first local maximiser reached from ``theta_init`` is returned.  Running
    out of iterations gives ``converged=False`` rather than an exception.
    """
    opts = options or NewtonOptions()
    start = time.perf_counter()
    lower, upper = objective.lower, objective.upper
    theta = objective.project(np.zeros(objective.p) if theta_init is None else np.asarray(theta_init, dtype=float))
    theta_init = theta.copy()
    if objective.theta_free:
        raise NonIdentifiableError("the objective does not depend on theta")

    try:
        value, grad, hess = objective.evaluate(theta)
    except EvaluationError as exc:
        raise OptimizationError(f"objective not finite at the starting point: {exc}") from exc
    if not np.any(hess):
        raise NonIdentifiableError("Hessian vanishes identically at the starting point")

    trace = [value]
    converged = False
    message = "maximum iterations reached"
    it = 0
    gnorm = math.inf
    for it in range(opts.max_iter + 1):
        if not math.isfinite(value):
            raise OptimizationError("non-finite objective")
        free = _free_coordinates(theta, grad, lower, upper)
        gnorm = float(np.max(np.abs(grad[free]))) if free.any() else 0.0
        if gnorm <= opts.grad_tol * (1.0 + abs(value)):
            converged = True
            message = "first-order stationary" if free.all() else "stationary with active bounds"
            break
        if it == opts.max_iter:
            break
        direction = np.zeros_like(theta)
        direction[free], _ = _ridge_newton(hess[np.ix_(free, free)], grad[free], opts.ridge)

        t = 1.0
        while True:
            trial = np.clip(theta + t * direction, lower, upper)
            trial_value = _safe_value(objective.value, trial)
            if trial_value >= value + opts.armijo * float(grad @ (trial - theta)):
                break
            t *= 0.5
            if t < opts.step_floor:
                trial = None
                break
        if trial is None or np.array_equal(trial, theta):
            message = "line search failed"
            break
        theta = trial
        value, grad, hess = objective.evaluate(theta)
        trace.append(value)

    return EstimationResult(
        theta_hat=theta,
        method="qmle",
        iterations=it,
        grad_norm=gnorm,
        objective=value,
        converged=converged,
        wall_time=time.perf_counter() - start,
        theta_init=theta_init,
        message=message,
        diagnostics={"trace": trace},
    )


def penalized_qmle(
    objective: Objective,
    penalty: PenaltySpec,
    theta_init=None,
    rates: RateSpec | None = None,
    options: NewtonOptions | None = None,
    fixed_zero=None,
) -> EstimationResult:
    """Maximise ``H(theta) - sum_j xi_j p(theta_j)`` by local quadratic approximation.

    At each iterate the penalty on every live coordinate is replaced by the
    quadratic majorant ``xi_j p'(|t_j|)/(2|t_j|) theta_j^2`` and one projected
    Newton step is taken on the resulting surrogate.  Coordinates whose
    magnitude drops below ``tau`` are set to exactly zero and stay there.
    ``fixed_zero`` pins a mask of coordinates to zero from the start.
    """
    opts = options or NewtonOptions()
    start = time.perf_counter()
    p = objective.p
    if theta_init is None:
        theta_init = qmle(objective, None, opts).theta_hat
    theta = objective.project(np.asarray(theta_init, dtype=float)).copy()
    theta_init = theta.copy()
    xi = penalty.weights(objective.n, p, rates)
    lower, upper = objective.lower, objective.upper

    def pen(t):
        return float(np.sum(xi * penalty.unit(t)))

    alive = np.abs(theta) >= opts.tau
    if fixed_zero is not None:
        alive &= ~np.asarray(fixed_zero, dtype=bool)
    theta[~alive] = 0.0

    trace = [_safe_value(objective.value, theta) - pen(theta)]
    change = math.inf
    it = 0
    for it in range(1, opts.lqa_max_iter + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            change = 0.0
            break
        value, grad, hess = objective.evaluate(theta)
        curv = xi[idx] * penalty.lambda_ * penalty.q * np.abs(theta[idx]) ** (penalty.q - 2)
        s_grad = grad[idx] - curv * theta[idx]
        s_hess = hess[np.ix_(idx, idx)] - np.diag(curv)

        def surrogate(t, idx=idx, curv=curv):
            return _safe_value(objective.value, t) - 0.5 * float(np.sum(curv * t[idx] ** 2))

        free = _free_coordinates(theta[idx], s_grad, lower[idx], upper[idx])
        direction = np.zeros(p)
        if free.any():
            sub = idx[free]
            direction[sub], _ = _ridge_newton(s_hess[np.ix_(free, free)], s_grad[free], opts.ridge)
        s0 = surrogate(theta)
        t = 1.0
        while True:
            trial = np.clip(theta + t * direction, lower, upper)
            if surrogate(trial) >= s0 + opts.armijo * float(s_grad @ (trial[idx] - theta[idx])):
                break
            t *= 0.5
            if t < opts.step_floor:
                trial = theta
                break
        change = float(np.max(np.abs(trial - theta)))
        theta = trial
        dead = alive & (np.abs(theta) < opts.tau)
        theta[dead] = 0.0
        alive &= ~dead
        trace.append(_safe_value(objective.value, theta) - pen(theta))
        if change < opts.step_tol:
            break

    value, grad, _ = objective.evaluate(theta, 1)
    objective_value = value - pen(theta)
    idx = np.flatnonzero(alive)
    pgrad = grad[idx] - xi[idx] * penalty.unit_derivative(theta[idx])
    free = _free_coordinates(theta[idx], pgrad, lower[idx], upper[idx])
    gnorm = float(np.max(np.abs(pgrad[free]))) if free.any() else 0.0
    converged = change < opts.step_tol and gnorm <= opts.lqa_grad_tol * (1.0 + abs(objective_value))
    return EstimationResult(
        theta_hat=theta,
        method="penalized",
        iterations=it,
        grad_norm=gnorm,
        objective=objective_value,
        converged=converged,
        wall_time=time.perf_counter() - start,
        theta_init=theta_init,
        message="converged" if converged else "stopped without meeting tolerances",
        diagnostics={"trace": trace, "weights": xi.tolist()},
    )


# --------------------------------------------------------------------------
# quasi-Bayesian estimator
# --------------------------------------------------------------------------


def effective_sample_size(chain: np.ndarray) -> np.ndarray:
    """Per-coordinate ESS using Geyer's initial positive sequence of autocorrelation pairs."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    N = chain.shape[0]
    out = np.empty(chain.shape[1])
    for k in range(chain.shape[1]):
        x = chain[:, k] - chain[:, k].mean()
        var = float(x @ x) / N
        if var == 0.0:
            out[k] = 0.0
            continue
        size = 1 << (2 * N - 1).bit_length()
        f = np.fft.rfft(x, size)
        acf = np.fft.irfft(f * np.conj(f), size)[:N] / (N * var)
        total = -1.0
        for m in range(0, N - 1, 2):
            pair = acf[m] + acf[m + 1]
            if pair <= 0:
                break
            total += 2.0 * pair
        out[k] = N / max(total, 1e-12)
    return out


def qbe(objective: Objective, theta_start=None, options: McmcOptions | None = None) -> EstimationResult:
    """Posterior mean under ``exp(H(theta))`` and a uniform prior on the box.

    Random-walk Metropolis with Gaussian proposals whose covariance is
    ``(scale^2 / p)`` times the inverse observed information at the start
    point; the scale is adapted towards ``target_acceptance`` during the first
    ``adapt_steps`` iterations and frozen afterwards.
    """
    opts = options or McmcOptions()
    if opts.burn_in < opts.adapt_steps or opts.iterations <= opts.burn_in:
        raise ConfigurationError("need adapt_steps <= burn_in < iterations")
    if not (np.all(np.isfinite(objective.lower)) and np.all(np.isfinite(objective.upper))):
        raise DomainError("a uniform prior needs a bounded parameter box")
    start = time.perf_counter()
    p = objective.p
    if theta_start is None:
        theta_start = qmle(objective).theta_hat
    theta = objective.project(np.asarray(theta_start, dtype=float)).copy()
    theta_init = theta.copy()
    rng = np.random.default_rng(opts.seed)

    info = -objective.hessian(theta)
    info = 0.5 * (info + info.T)
    eig, vec = np.linalg.eigh(info)
    floor = 1e-12 * max(eig.max(), 1.0)
    chol = vec @ np.diag(1.0 / np.sqrt(np.maximum(eig, floor)))
    log_scale = math.log(opts.proposal_scale / math.sqrt(p)) if opts.proposal_scale > 0 else -math.inf

    current = objective.value(theta)
    samples = np.empty((opts.iterations - opts.burn_in, p))
    accepted_after_adapt = 0
    for i in range(opts.iterations):
        scale = math.exp(log_scale) if log_scale > -math.inf else 0.0
        proposal = theta + scale * (chol @ rng.standard_normal(p))
        log_u = math.log(rng.uniform())
        accept = False
        if objective.in_box(proposal):
            cand = _safe_value(objective.value, proposal)
            if cand - current >= log_u:
                accept = True
                theta, current = proposal, cand
        if i < opts.adapt_steps:
            if log_scale > -math.inf:
                log_scale += (float(accept) - opts.target_acceptance) / (i + 1) ** 0.6
        else:
            accepted_after_adapt += accept
        if i >= opts.burn_in:
            samples[i - opts.burn_in] = theta

    acceptance = accepted_after_adapt / (opts.iterations - opts.adapt_steps)
    ess = effective_sample_size(samples)
    mean = samples.mean(axis=0)
    sd = samples.std(axis=0, ddof=1)
    lo, hi = opts.acceptance_bounds
    ok = lo <= acceptance <= hi and bool(np.all(ess > 0))
    mcse = np.where(ess > 0, sd / np.sqrt(np.maximum(ess, 1e-300)), np.inf)
    return EstimationResult(
        theta_hat=objective.project(mean),
        method="qbe",
        iterations=opts.iterations,
        grad_norm=float("nan"),
        objective=objective.value(objective.project(mean)),
        converged=ok,
        wall_time=time.perf_counter() - start,
        theta_init=theta_init,
        message="diagnostics passed" if ok else "diagnostics failed",
        diagnostics={
            "acceptance": acceptance,
            "ess": ess.tolist(),
            "posterior_sd": sd.tolist(),
            "mcse": mcse.tolist(),
            "final_scale": math.exp(log_scale) if log_scale > -math.inf else 0.0,
            "diagnostics_failed": not ok,
        },
    )
