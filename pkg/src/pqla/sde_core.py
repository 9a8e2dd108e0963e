"""Simulation of the stochastic regression model and dataset persistence.

The observed process is

    Y_t = Y_0 + int_0^t b_s ds + int_0^t sigma(X_s, theta) dw^0_s

where the covariate process X is driven by Wiener processes independent of
w^0.  Everything is simulated with an Euler-Maruyama scheme on a fine grid of
``n * kappa`` steps and then subsampled to the ``n + 1`` observation times.

Only scalar observations (``m == 1``) are supported.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numba import njit

from .errors import ConfigurationError, DataError, DomainError, SimulationError

DEFAULT_KAPPA = 10
DATASET_SCHEMA = "pqla-dataset/1"


# --------------------------------------------------------------------------
# volatility families
# --------------------------------------------------------------------------


class Volatility:
    """A parametric family sigma(x, theta) for scalar observations.

    Subclasses work with the log-variance ``l(x, theta) = log S(x, theta)``,
    where ``S = sigma**2``.  ``derivatives`` returns ``(l, dl, d2l)`` with
    shapes ``(N,)``, ``(N, p)`` and ``(N, p, p)``; ``d2l`` may be ``None``
    when it vanishes identically.
    """

    name = "abstract"
    theta_free = False

    def sigma(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_variance(self, x, theta):
        with np.errstate(divide="ignore"):
            return 2.0 * np.log(np.abs(self.sigma(x, theta)))

    def derivatives(self, x, theta):
        raise NotImplementedError

    def check_dimensions(self, p: int, d: int) -> None:
        pass

    def describe(self) -> str:
        return self.name


class SinExpVolatility(Volatility):
    """sigma(x, theta) = exp(sum_k theta_k sin(x^k)), one parameter per covariate."""

    name = "sin-exp"

    def sigma(self, x, theta):
        return np.exp(np.sin(x) @ theta)

    def log_variance(self, x, theta):
        return 2.0 * (np.sin(x) @ theta)

    def derivatives(self, x, theta):
        dl = 2.0 * np.sin(x)
        return dl @ theta, dl, None

    def check_dimensions(self, p, d):
        if p != d:
            raise ConfigurationError(f"sin-exp volatility needs p == d, got p={p}, d={d}")


class ConstantVolatility(Volatility):
    """sigma(x, theta) = c.  The quasi-likelihood does not depend on theta."""

    name = "constant"
    theta_free = True

    def __init__(self, c: float = 1.0):
        self.c = float(c)
        if not math.isfinite(self.c):
            raise ConfigurationError("constant volatility must be finite")

    def sigma(self, x, theta):
        return np.full(len(x), self.c)

    def derivatives(self, x, theta):
        p = len(theta)
        return self.log_variance(x, theta), np.zeros((len(x), p)), None

    def describe(self):
        return f"constant {self.c!r}"


class CallableVolatility(Volatility):
    """Wraps a vectorised ``sigma(x, theta) -> (N,)``; derivatives by central differences."""

    name = "callable"

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], rel_step: float = 1e-5):
        self.fn = fn
        self.rel_step = rel_step

    def sigma(self, x, theta):
        return np.asarray(self.fn(x, theta), dtype=float)

    def derivatives(self, x, theta):
        theta = np.asarray(theta, dtype=float)
        p = len(theta)
        l0 = self.log_variance(x, theta)
        steps = self.rel_step * (1.0 + np.abs(theta))
        dl = np.empty((len(x), p))
        d2l = np.empty((len(x), p, p))
        for j in range(p):
            e = np.zeros(p)
            e[j] = steps[j]
            lp = self.log_variance(x, theta + e)
            lm = self.log_variance(x, theta - e)
            dl[:, j] = (lp - lm) / (2 * steps[j])
            d2l[:, j, j] = (lp - 2 * l0 + lm) / steps[j] ** 2
            for k in range(j):
                f = np.zeros(p)
                f[k] = steps[k]
                cross = (
                    self.log_variance(x, theta + e + f)
                    - self.log_variance(x, theta + e - f)
                    - self.log_variance(x, theta - e + f)
                    + self.log_variance(x, theta - e - f)
                ) / (4 * steps[j] * steps[k])
                d2l[:, j, k] = d2l[:, k, j] = cross
        return l0, dl, d2l


def make_volatility(identifier: str) -> Volatility:
    """Parse ``"sin-exp"`` or ``"constant <c>"``."""
    parts = identifier.split()
    if parts == ["sin-exp"]:
        return SinExpVolatility()
    if parts and parts[0] == "constant":
        if len(parts) > 2:
            raise ConfigurationError(f"bad volatility identifier {identifier!r}")
        return ConstantVolatility(float(parts[1]) if len(parts) == 2 else 1.0)
    raise ConfigurationError(f"unknown volatility family {identifier!r}")


# --------------------------------------------------------------------------
# covariate dynamics
# --------------------------------------------------------------------------


@njit(cache=True)
def _euler_sin_decay(dw, dt, x0):
    steps, d = dw.shape
    X = np.empty((steps + 1, d))
    X[0] = x0
    for i in range(steps):
        t = i * dt
        for k in range(d):
            x = X[i, k]
            X[i + 1, k] = x + math.sin(2.0 * (k + 1) * math.pi * t) / (1.0 + x * x) * dw[i, k]
    return X


class CovariateDiffusion:
    """Driftless covariate dynamics dX_t = a(t, X_t) dw_t, componentwise."""

    name = "abstract"

    def coefficient(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def integrate(self, dw: np.ndarray, dt: float, x0: np.ndarray) -> np.ndarray:
        X = np.empty((dw.shape[0] + 1, dw.shape[1]))
        X[0] = x0
        for i in range(dw.shape[0]):
            X[i + 1] = X[i] + self.coefficient(i * dt, X[i]) * dw[i]
        return X

    def describe(self) -> str:
        return self.name


class SinDecayDiffusion(CovariateDiffusion):
    """dX^k = sin(2 k pi t) / (1 + (X^k)^2) dw^k, k = 1..d."""

    name = "sin-decay"

    def coefficient(self, t, x):
        k = np.arange(1, len(x) + 1)
        return np.sin(2 * k * np.pi * t) / (1 + x * x)

    def integrate(self, dw, dt, x0):
        return _euler_sin_decay(np.ascontiguousarray(dw), float(dt), np.asarray(x0, dtype=float))


class ConstantDiffusion(CovariateDiffusion):
    name = "constant"

    def __init__(self, c: float = 1.0):
        self.c = float(c)

    def coefficient(self, t, x):
        return np.full(len(x), self.c)

    def integrate(self, dw, dt, x0):
        X = np.empty((dw.shape[0] + 1, dw.shape[1]))
        X[0] = x0
        np.cumsum(self.c * dw, axis=0, out=X[1:])
        X[1:] += X[0]
        return X

    def describe(self):
        return f"constant {self.c!r}"


def make_covariate(identifier: str) -> CovariateDiffusion:
    parts = identifier.split()
    if parts == ["sin-decay"]:
        return SinDecayDiffusion()
    if parts and parts[0] == "constant" and len(parts) <= 2:
        return ConstantDiffusion(float(parts[1]) if len(parts) == 2 else 1.0)
    raise ConfigurationError(f"unknown covariate diffusion {identifier!r}")


# --------------------------------------------------------------------------
# model, paths, dataset
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelSpec:
    p: int
    d: int
    theta_box: tuple[tuple[float, float], ...]
    volatility: Volatility = field(default_factory=SinExpVolatility)
    covariate: CovariateDiffusion = field(default_factory=SinDecayDiffusion)
    horizon_T: float = 1.0
    m: int = 1
    drift: str = "zero"
    x0: tuple[float, ...] | None = None
    y0: float = 0.0

    def __post_init__(self):
        if self.p < 1 or self.d < 1:
            raise ConfigurationError("p and d must be positive")
        if self.m != 1:
            raise ConfigurationError("only scalar observations (m = 1) are supported")
        if not (self.horizon_T > 0 and math.isfinite(self.horizon_T)):
            raise ConfigurationError("horizon_T must be positive and finite")
        if len(self.theta_box) != self.p:
            raise ConfigurationError(f"theta_box needs {self.p} intervals, got {len(self.theta_box)}")
        for lo, hi in self.theta_box:
            if not (lo < hi):
                raise ConfigurationError(f"empty parameter interval ({lo}, {hi})")
        if self.drift != "zero":
            raise ConfigurationError(f"unknown drift family {self.drift!r}")
        if self.x0 is None:
            object.__setattr__(self, "x0", (0.0,) * self.d)
        elif len(self.x0) != self.d:
            raise ConfigurationError("x0 must have d entries")
        self.volatility.check_dimensions(self.p, self.d)

    @classmethod
    def sin_exp(cls, p: int = 10, bound: float = 5.0, **kwargs) -> ModelSpec:
        """The volatility regression experiment with ``p = d`` covariates."""
        return cls(p=p, d=p, theta_box=((-bound, bound),) * p, **kwargs)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.theta_box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.theta_box])

    def in_closed_box(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return theta.shape == (self.p,) and bool(np.all((theta >= self.lower) & (theta <= self.upper)))

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "d": self.d,
            "m": self.m,
            "horizon_T": self.horizon_T,
            "theta_box": [list(b) for b in self.theta_box],
            "volatility": self.volatility.describe(),
            "covariate": self.covariate.describe(),
            "drift": self.drift,
            "x0": list(self.x0),
            "y0": self.y0,
        }


@dataclass(frozen=True, eq=False)
class PathBundle:
    n: int
    kappa: int
    fine_step: float
    X_fine: np.ndarray
    dw_x: np.ndarray
    dw_y: np.ndarray
    seed: int | None

    @property
    def fine_times(self) -> np.ndarray:
        return np.arange(self.X_fine.shape[0]) * self.fine_step

    @property
    def X_obs(self) -> np.ndarray:
        return self.X_fine[:: self.kappa]


@dataclass(eq=False)
class Dataset:
    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        validate_dataset(self)

    @property
    def n(self) -> int:
        return len(self.times) - 1

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def h(self) -> float:
        return self.horizon / self.n

    def increments(self) -> np.ndarray:
        return np.diff(self.Y, axis=0)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in ((self.times, other.times), (self.X, other.X), (self.Y, other.Y))
        )


def validate_dataset(ds: Dataset, p: int | None = None) -> None:
    t = ds.times
    if t.ndim != 1 or len(t) < 2:
        raise DataError("need at least two observation times")
    if ds.X.shape[0] != len(t) or ds.Y.shape[0] != len(t):
        raise DataError("X, Y and times must have the same number of rows")
    for name, arr in (("times", t), ("X", ds.X), ("Y", ds.Y)):
        if not np.all(np.isfinite(arr)):
            raise DataError(f"non-finite entry in {name}")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise DataError(f"times not strictly increasing at row {int(np.argmax(dt <= 0)) + 1}")
    n = len(t) - 1
    grid = t[0] + np.arange(n + 1) * ((t[-1] - t[0]) / n)
    if np.max(np.abs(t - grid)) > 1e-12 * max(1.0, abs(t[-1]), abs(t[0])):
        raise DataError("observation times are not a uniform grid")
    if p is not None and n < p + 1:
        raise DataError(f"need n >= p + 1 = {p + 1} observations, got n = {n}")


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------


def _first_bad_row(arr: np.ndarray) -> int | None:
    bad = ~np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)
    return int(np.argmax(bad)) if bad.any() else None


def simulate_paths(
    spec: ModelSpec,
    n: int,
    kappa: int = DEFAULT_KAPPA,
    seed: int | None = 0,
    *,
    dw_x: np.ndarray | None = None,
    dw_y: np.ndarray | None = None,
) -> PathBundle:
    """Euler-Maruyama covariate paths on a grid of ``n * kappa`` steps.

    Increments may be prescribed through ``dw_x`` (shape ``(n*kappa, d)``) and
    ``dw_y`` (shape ``(n*kappa, m)``); otherwise both are drawn from
    ``numpy.random.default_rng(seed)`` in that order.
    """
    if n < 1 or kappa < 1:
        raise ConfigurationError("n and kappa must be positive integers")
    steps = n * kappa
    dt = spec.horizon_T / steps
    rng = np.random.default_rng(seed)
    if dw_x is None:
        dw_x = rng.standard_normal((steps, spec.d)) * math.sqrt(dt)
    if dw_y is None:
        dw_y = rng.standard_normal((steps, spec.m)) * math.sqrt(dt)
    dw_x = np.asarray(dw_x, dtype=float).reshape(steps, spec.d)
    dw_y = np.asarray(dw_y, dtype=float).reshape(steps, spec.m)

    with np.errstate(over="ignore", invalid="ignore"):
        X = spec.covariate.integrate(dw_x, dt, np.asarray(spec.x0, dtype=float))
    bad = _first_bad_row(X)
    if bad is not None:
        raise SimulationError(f"covariate simulation blew up at step {bad}", step=bad)
    return PathBundle(n=n, kappa=kappa, fine_step=dt, X_fine=X, dw_x=dw_x, dw_y=dw_y, seed=seed)


def simulate_observation(spec: ModelSpec, theta_star, paths: PathBundle) -> Dataset:
    theta_star = np.asarray(theta_star, dtype=float)
    if not spec.in_closed_box(theta_star):
        raise DomainError(f"theta_star {theta_star.tolist()} outside the parameter box")
    with np.errstate(over="ignore", invalid="ignore"):
        sig = spec.volatility.sigma(paths.X_fine[:-1], theta_star)
        inc = sig[:, None] * paths.dw_y
    bad = _first_bad_row(inc)
    if bad is not None:
        raise SimulationError(f"observation simulation blew up at step {bad}", step=bad)
    Y = np.empty((inc.shape[0] + 1, spec.m))
    Y[0] = spec.y0
    np.cumsum(inc, axis=0, out=Y[1:])
    Y[1:] += spec.y0
    k = paths.kappa
    times = np.arange(paths.n + 1) * (spec.horizon_T / paths.n)
    return Dataset(
        times=times,
        X=paths.X_fine[::k].copy(),
        Y=Y[::k].copy(),
        provenance={"source": "simulated", "seed": paths.seed, "kappa": k,
                    "theta_star": theta_star.tolist(), "model": spec.to_dict()},
    )


def simulate_dataset(spec: ModelSpec, theta_star, n: int, kappa: int = DEFAULT_KAPPA, seed: int | None = 0):
    """Convenience wrapper returning ``(dataset, paths)``."""
    paths = simulate_paths(spec, n, kappa, seed)
    return simulate_observation(spec, theta_star, paths), paths


# --------------------------------------------------------------------------
# CSV persistence
# --------------------------------------------------------------------------


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` as CSV; a leading ``#`` line records the schema version and scalar provenance."""
    header = ["t"] + [f"x{k + 1}" for k in range(ds.d)] + [f"y{k + 1}" for k in range(ds.m)]
    rows = np.column_stack([ds.times, ds.X, ds.Y])
    meta = {"schema_version": DATASET_SCHEMA}
    meta.update({k: v for k, v in ds.provenance.items()
                 if isinstance(v, (int, float, str)) and k != "schema_version"})
    with open(path, "w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={str(v).replace(' ', '_')}" for k, v in meta.items()) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, ".17g") for v in row])


def _parse_header(header: Sequence[str], line: int = 1) -> tuple[int, int]:
    if not header or header[0].strip() != "t":
        raise DataError("header must start with 't'", line=line)
    names = [h.strip() for h in header[1:]]
    d = 0
    while d < len(names) and names[d] == f"x{d + 1}":
        d += 1
    m = 0
    while d + m < len(names) and names[d + m] == f"y{m + 1}":
        m += 1
    if d + m != len(names) or d == 0 or m == 0:
        raise DataError(f"header must read t,x1..xd,y1..ym, got {','.join(header)}", line=line)
    return d, m


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    try:
        return _parse_dataset(lines, path)
    except DataError as exc:
        err = DataError(str(exc), path=path)
        err.line = exc.line
        raise err from None


def _parse_dataset(lines: list[str], path: Path) -> Dataset:
    meta = {}
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        for item in lines[start][1:].split():
            key, _, value = item.partition("=")
            meta[key] = value
        start += 1
    rows = list(csv.reader(lines[start:]))
    if not rows:
        raise DataError("empty file", line=start + 1)
    d, m = _parse_header(rows[0], start + 1)
    width = 1 + d + m
    values = []
    for lineno, row in enumerate(rows[1:], start=start + 2):
        if not row:
            continue
        if len(row) != width:
            raise DataError(f"expected {width} columns (t, {d} x, {m} y), found {len(row)}", line=lineno)
        try:
            values.append([float(v) for v in row])
        except ValueError as exc:
            raise DataError(f"cannot parse number: {exc}", line=lineno) from None
    if len(values) < 2:
        raise DataError("need at least two observation rows")
    arr = np.array(values)
    return Dataset(times=arr[:, 0], X=arr[:, 1 : 1 + d], Y=arr[:, 1 + d :],
                   provenance={**meta, "source": "file", "path": str(path)})
