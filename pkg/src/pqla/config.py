"""INI-style configuration files for the command line.

Every section and key is optional; an empty file describes the default
volatility regression experiment.  Unknown sections or keys are rejected.

    [model]        p, volatility, covariate, horizon, theta_bound, x0
    [experiment]   theta_star, n_grid, n, replications, master_seed,
                   estimators, kappa, workers
    [penalty]      kind, q, q_prime, weights_rule, lambda, c0, clamp
    [rates]        exponent
    [optimizer]    tau, max_iter, lqa_max_iter
    [mcmc]         iterations, burn_in, adapt_steps, proposal_scale
    [output]       dir, formats, verbosity
    [diagnostics]  r_grid, eps, reps, n, n_small, n_large, probes, starts,
                   chi0_budget, moment_order
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .experiments import DEFAULT_THETA, ExperimentConfig
from .optimizer import McmcOptions, NewtonOptions
from .penalties import PenaltySpec
from .quasi_likelihood import RateSpec
from .sde_core import ModelSpec, make_covariate, make_volatility

SCHEMA = {
    "model": {"p", "volatility", "covariate", "horizon", "theta_bound", "x0"},
    "experiment": {"theta_star", "n_grid", "n", "replications", "master_seed", "estimators", "kappa", "workers"},
    "penalty": {"kind", "q", "q_prime", "weights_rule", "lambda", "c0", "clamp"},
    "rates": {"exponent"},
    "optimizer": {"tau", "max_iter", "lqa_max_iter"},
    "mcmc": {"iterations", "burn_in", "adapt_steps", "proposal_scale"},
    "output": {"dir", "formats", "verbosity"},
    "diagnostics": {"r_grid", "eps", "reps", "n", "n_small", "n_large", "probes", "starts",
                    "chi0_budget", "moment_order"},
}
FORMATS = ("csv", "json", "svg")


@dataclass(frozen=True)
class DiagnosticsConfig:
    r_grid: tuple[float, ...] = (1.5, 3.0, 6.0, 12.0, 24.0, 48.0, 96.0)
    eps: float = 0.5
    reps: int = 200
    n: int | None = None
    n_small: int = 1000
    n_large: int = 10000
    probes: int = 200
    starts: int = 20
    chi0_budget: int = 10
    moment_order: float = 4.0


@dataclass(frozen=True)
class CliConfig:
    experiment: ExperimentConfig
    n: int
    out_dir: Path = Path(".")
    formats: tuple[str, ...] = ("csv", "json")
    verbosity: int = 1
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(v for v in text.replace(",", " ").split())


def parse_config(text: str, source: str = "<config>") -> CliConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), default_section="__none__")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"{source}: unknown section [{section}]")
        unknown = set(parser[section]) - SCHEMA[section]
        if unknown:
            raise ConfigurationError(f"{source}: unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")

    def get(section, key, conv, default):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return conv(raw)
            except ValueError as exc:
                raise ConfigurationError(f"{source}: [{section}] {key} = {raw!r}: {exc}") from None
        return default

    try:
        p = get("model", "p", int, 10)
        bound = get("model", "theta_bound", float, 5.0)
        vol = make_volatility(get("model", "volatility", str, "sin-exp"))
        cov = make_covariate(get("model", "covariate", str, "sin-decay"))
        x0 = get("model", "x0", _floats, None)
        model = ModelSpec(p=p, d=p, theta_box=((-bound, bound),) * p, volatility=vol, covariate=cov,
                          horizon_T=get("model", "horizon", float, 1.0), x0=x0)

        default_theta = DEFAULT_THETA[:p] if p <= len(DEFAULT_THETA) else None
        theta_star = get("experiment", "theta_star", _floats, default_theta)
        if theta_star is None:
            raise ConfigurationError(f"{source}: theta_star is required when p > {len(DEFAULT_THETA)}")

        q_prime = get("penalty", "q_prime", float, 2.0 / 3.0)
        kind = get("penalty", "kind", str, "bridge")
        if kind == "lasso":
            penalty = PenaltySpec.lasso(c0=get("penalty", "c0", float, 10.0),
                                        clamp=get("penalty", "clamp", _bool, False))
        else:
            penalty = PenaltySpec(
                kind=kind,
                q=get("penalty", "q", float, 0.3),
                q_prime=q_prime,
                weights_rule=get("penalty", "weights_rule", str, "n^{q'/2}"),
                lambda_=get("penalty", "lambda", float, 1.0),
                c0=get("penalty", "c0", float, 10.0),
                clamp=get("penalty", "clamp", _bool, False),
            )
        newton = NewtonOptions()
        newton = replace(newton, tau=get("optimizer", "tau", float, newton.tau),
                         max_iter=get("optimizer", "max_iter", int, newton.max_iter),
                         lqa_max_iter=get("optimizer", "lqa_max_iter", int, newton.lqa_max_iter))
        mcmc = McmcOptions()
        mcmc = replace(mcmc, iterations=get("mcmc", "iterations", int, mcmc.iterations),
                       burn_in=get("mcmc", "burn_in", int, mcmc.burn_in),
                       adapt_steps=get("mcmc", "adapt_steps", int, mcmc.adapt_steps),
                       proposal_scale=get("mcmc", "proposal_scale", float, mcmc.proposal_scale))
        n_grid = get("experiment", "n_grid", _ints, (1000, 2000, 3000, 10000))
        experiment = ExperimentConfig(
            model=model,
            theta_star=theta_star,
            n_grid=n_grid,
            replications=get("experiment", "replications", int, 300),
            penalty=penalty,
            rates=RateSpec(exponent=get("rates", "exponent", float, 0.5)),
            master_seed=get("experiment", "master_seed", int, 20240601),
            estimators=get("experiment", "estimators", _words, ("qmle", "penalized")),
            kappa=get("experiment", "kappa", int, 10),
            workers=get("experiment", "workers", int, 1),
            newton=newton,
            mcmc=mcmc,
        )
        formats = get("output", "formats", _words, ("csv", "json"))
        bad = set(formats) - set(FORMATS)
        if bad:
            raise ConfigurationError(f"{source}: unknown output format(s) {sorted(bad)}")
        dcfg = DiagnosticsConfig()
        diagnostics = DiagnosticsConfig(
            r_grid=get("diagnostics", "r_grid", _floats, dcfg.r_grid),
            eps=get("diagnostics", "eps", float, dcfg.eps),
            reps=get("diagnostics", "reps", int, dcfg.reps),
            n=get("diagnostics", "n", int, None),
            n_small=get("diagnostics", "n_small", int, dcfg.n_small),
            n_large=get("diagnostics", "n_large", int, dcfg.n_large),
            probes=get("diagnostics", "probes", int, dcfg.probes),
            starts=get("diagnostics", "starts", int, dcfg.starts),
            chi0_budget=get("diagnostics", "chi0_budget", int, dcfg.chi0_budget),
            moment_order=get("diagnostics", "moment_order", float, dcfg.moment_order),
        )
        return CliConfig(
            experiment=experiment,
            n=get("experiment", "n", int, n_grid[0]),
            out_dir=Path(get("output", "dir", str, ".")),
            formats=formats,
            verbosity=get("output", "verbosity", int, 1),
            diagnostics=diagnostics,
        )
    except ConfigurationError as exc:
        msg = str(exc)
        raise ConfigurationError(msg if msg.startswith(source) else f"{source}: {msg}") from None


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def load_config(path: str | Path) -> CliConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
