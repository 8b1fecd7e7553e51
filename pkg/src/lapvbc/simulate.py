"""Synthetic datasets for the two benchmark designs.

``poisson-regression``: a standardised covariate ``x`` and counts
``y ~ Poisson(exp(-1 - 0.5 x))``, mostly zeros and ones.

``tokyo-binomial``: 366 calendar days with a smooth periodic success
probability, two trials per day except a single trial on day 60.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .config import RunConfig, dump_config
from .exceptions import ConfigError
from .model import EffectSpec, LikelihoodSpec, ModelSpec, ObservationData

POISSON_COEFFICIENTS = (-1.0, -0.5)
TOKYO_DAYS = 366
TOKYO_SHORT_DAY = 60
TOKYO_PRECISION = 1.0e4
SCENARIOS = ("poisson-regression", "tokyo-binomial")


@dataclass(frozen=True, eq=False)
class Dataset:
    columns: dict
    config: RunConfig

    def observations(self) -> ObservationData:
        cols = dict(self.columns)
        y = cols.pop(self.config.response)
        trials = None
        if self.config.likelihood.trials_column is not None:
            trials = cols[self.config.likelihood.trials_column]
        return ObservationData(y=y, covariates=cols, trials=trials)

    def model(self) -> ModelSpec:
        return self.config.model(self.observations())

    def write(self, csv_path) -> Path:
        """Write the CSV and a companion ``.yaml`` config next to it."""
        csv_path = Path(csv_path)
        names = list(self.columns)
        cols = [self.columns[k] for k in names]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for row in zip(*cols):
                writer.writerow([_fmt(v) for v in row])
        config_path = csv_path.with_suffix(".yaml")
        cfg = RunConfig(self.config.likelihood, self.config.response, Path(csv_path.name),
                        self.config.effects)
        dump_config(cfg, config_path)
        return config_path


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def poisson_regression(n=50, seed=0, coefficients=POISSON_COEFFICIENTS) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x = (x - x.mean()) / x.std(ddof=1)
    b0, b1 = coefficients
    y = rng.poisson(np.exp(b0 + b1 * x)).astype(float)
    cfg = RunConfig(LikelihoodSpec("poisson"), "y", None,
                    (EffectSpec("intercept", "fixed"), EffectSpec("x", "fixed", covariate="x")))
    return Dataset({"y": y, "x": x}, cfg)


def tokyo_probability(day) -> np.ndarray:
    """Smooth annual success probability used for the binomial scenario."""
    t = 2.0 * np.pi * np.asarray(day, dtype=float) / TOKYO_DAYS
    return expit(-1.0 + 0.8 * np.sin(t) + 0.4 * np.cos(2.0 * t))


def tokyo_binomial(n=TOKYO_DAYS, seed=0, precision=TOKYO_PRECISION) -> Dataset:
    """One observation per day; ``n`` other than 366 is rejected."""
    if n != TOKYO_DAYS:
        raise ConfigError(f"tokyo-binomial has exactly {TOKYO_DAYS} days, got n={n}")
    rng = np.random.default_rng(seed)
    day = np.arange(1, TOKYO_DAYS + 1, dtype=float)
    trials = np.full(TOKYO_DAYS, 2.0)
    trials[TOKYO_SHORT_DAY - 1] = 1.0
    y = rng.binomial(trials.astype(int), tokyo_probability(day)).astype(float)
    cfg = RunConfig(LikelihoodSpec("binomial", trials_column="n"), "y", None,
                    (EffectSpec("time", "cyclic_rw2", size=TOKYO_DAYS, prior_precision=precision,
                                index="day"),))
    return Dataset({"y": y, "n": trials, "day": day}, cfg)


def simulate(scenario: str, n: int, seed: int) -> Dataset:
    if n < 10:
        raise ConfigError(f"n must be at least 10, got {n}")
    if scenario == "poisson-regression":
        return poisson_regression(n, seed)
    if scenario == "tokyo-binomial":
        return tokyo_binomial(n, seed)
    raise ConfigError(f"unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}")
