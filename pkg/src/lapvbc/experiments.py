"""Comparison runs of the Laplace fit, the mean correction and the sampler.

Shared by the experiment scripts and the acceptance tests: the Poisson
regression replicates, the timing comparison at large ``n`` and the cyclic
binomial smoothing example.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .laplace import fit_laplace
from .oracle import sample_posterior
from .problem import assemble
from .simulate import TOKYO_PRECISION, poisson_regression, tokyo_binomial
from .vbc import CorrectionSet, vbc_correct


@dataclass(frozen=True)
class Comparison:
    """Posterior means of the three methods over the corrected indices."""

    labels: tuple
    mean_ga: np.ndarray
    mean_vbc: np.ndarray
    mean_mcmc: np.ndarray
    mc_error: np.ndarray
    fit_seconds: float
    correct_seconds: float
    mcmc_seconds: float

    @property
    def error_ga(self) -> np.ndarray:
        return np.abs(self.mean_ga - self.mean_mcmc)

    @property
    def error_vbc(self) -> np.ndarray:
        return np.abs(self.mean_vbc - self.mean_mcmc)

    @property
    def mae_ga(self) -> float:
        return float(np.mean(self.error_ga))

    @property
    def mae_vbc(self) -> float:
        return float(np.mean(self.error_vbc))

    def improved(self) -> bool:
        """True when the correction is closer to the sampler for every index."""
        return bool(np.all(self.error_vbc < self.error_ga))


def _problem(dataset):
    data = dataset.observations()
    return assemble(dataset.config.model(data), data)


def compare(problem, J=None, iters=200_000, burn_in=20_000, seed=0) -> Comparison:
    """Fit, correct over ``J`` (default: all fixed effects) and sample.

    Means are compared on the correction set.
    """
    t0 = time.perf_counter()
    ga = fit_laplace(problem)
    t1 = time.perf_counter()
    res = vbc_correct(ga, J)
    t2 = time.perf_counter()
    chain = sample_posterior(problem, iters, burn_in, seed=seed, ga=ga, track_predictors=False)
    t3 = time.perf_counter()
    idx = np.asarray(res.J)
    names = problem.layout.effect_labels()
    labels = tuple(names[i] for i in idx)
    return Comparison(labels, ga.mean[idx], res.mean[idx], chain.mean[idx],
                      chain.mc_error()[idx], t1 - t0, t2 - t1, t3 - t2)


def poisson_replicate(seed, n=50, iters=200_000, burn_in=20_000) -> Comparison:
    """One replicate of the two-coefficient Poisson regression."""
    return compare(_problem(poisson_regression(n, seed)), iters=iters, burn_in=burn_in,
                   seed=seed)


def tokyo_comparison(seed=0, precision=TOKYO_PRECISION, iters=200_000,
                     burn_in=20_000) -> Comparison:
    """Cyclic RW2 binomial smoother with the whole time block corrected."""
    problem = _problem(tokyo_binomial(seed=seed, precision=precision))
    J = CorrectionSet(tuple(range(problem.m_star)))
    return compare(problem, J, iters=iters, burn_in=burn_in, seed=seed)


@dataclass(frozen=True)
class Timing:
    n: int
    fit_seconds: float
    correct_seconds: float
    mcmc_seconds: float | None

    @property
    def ratio(self) -> float:
        """Wall time of fit plus correction relative to the fit alone."""
        return (self.fit_seconds + self.correct_seconds) / self.fit_seconds

    @property
    def mcmc_factor(self) -> float | None:
        if self.mcmc_seconds is None:
            return None
        return self.mcmc_seconds / (self.fit_seconds + self.correct_seconds)


def timing(n, seed=0, repeats=15, iters=200_000, burn_in=20_000, sample=True) -> Timing:
    """Median wall times of the fit and of the correction, plus one sampler run."""
    problem = _problem(poisson_regression(n, seed))
    fits, corrections = [], []
    for _ in range(repeats):
        t0 = time.perf_counter()
        ga = fit_laplace(problem)
        t1 = time.perf_counter()
        vbc_correct(ga)
        t2 = time.perf_counter()
        fits.append(t1 - t0)
        corrections.append(t2 - t1)
    mcmc = None
    if sample:
        t0 = time.perf_counter()
        sample_posterior(problem, iters, burn_in, seed=seed, ga=ga, track_predictors=False)
        mcmc = time.perf_counter() - t0
    return Timing(n, float(np.median(fits)), float(np.median(corrections)), mcmc)
