"""Observation log-likelihoods, their derivatives in the linear predictor,
and second-order Taylor coefficients.

All functions are vectorised over observations. For an observation with
log-density ``g(eta)`` the Taylor expansion around ``eta0`` is written as

    g(eta) ~= a + b * eta - 0.5 * c * eta**2

with ``c = -g''(eta0)`` and ``b = g'(eta0) - g''(eta0) * eta0``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .exceptions import ModelError

_LOG_2PI = np.log(2.0 * np.pi)


class Family(enum.Enum):
    POISSON_LOG = "poisson"
    BINOMIAL_LOGIT = "binomial"
    GAUSSIAN_IDENTITY = "gaussian"

    @classmethod
    def parse(cls, name) -> "Family":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "poisson": cls.POISSON_LOG,
            "poissonlog": cls.POISSON_LOG,
            "binomial": cls.BINOMIAL_LOGIT,
            "binomiallogit": cls.BINOMIAL_LOGIT,
            "logistic": cls.BINOMIAL_LOGIT,
            "gaussian": cls.GAUSSIAN_IDENTITY,
            "gaussianidentity": cls.GAUSSIAN_IDENTITY,
            "normal": cls.GAUSSIAN_IDENTITY,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ModelError(f"unknown likelihood family {name!r}") from None


def _is_integral(x):
    return np.all(np.isfinite(x)) and np.all(np.floor(x) == x)


def validate_observations(family, y, trials=None, precision=None):
    """Check responses and fixed likelihood parameters for ``family``."""
    family = Family.parse(family)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ModelError("responses must be finite (no missing values)")
    if family is Family.POISSON_LOG:
        if not _is_integral(y) or np.any(y < 0):
            raise ModelError("Poisson responses must be integers >= 0")
    elif family is Family.BINOMIAL_LOGIT:
        if trials is None:
            raise ModelError("binomial likelihood needs trial counts for every observation")
        n = np.broadcast_to(np.asarray(trials, dtype=float), y.shape)
        if not _is_integral(n) or np.any(n < 1):
            raise ModelError("binomial trial counts must be integers >= 1")
        if not _is_integral(y) or np.any(y < 0) or np.any(y > n):
            raise ModelError("binomial responses must satisfy 0 <= y <= n")
    else:
        if precision is None or not np.isfinite(precision) or precision <= 0:
            raise ModelError("Gaussian observation precision must be finite and > 0")


def _check_eta(eta):
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        bad = np.flatnonzero(~np.isfinite(np.atleast_1d(eta)))
        raise ValueError(f"non-finite linear predictor at observation(s) {bad[:10].tolist()}")
    return eta


def _log_normaliser(family, y, trials, precision):
    if family is Family.POISSON_LOG:
        return -gammaln(y + 1.0)
    if family is Family.BINOMIAL_LOGIT:
        return gammaln(trials + 1.0) - gammaln(y + 1.0) - gammaln(trials - y + 1.0)
    return np.full_like(y, 0.5 * (np.log(precision) - _LOG_2PI))


def _kernel(family, y, eta, trials, precision):
    """Log-likelihood without its normalising constant."""
    if family is Family.POISSON_LOG:
        return y * eta - np.exp(eta)
    if family is Family.BINOMIAL_LOGIT:
        # log(1 + e^eta) evaluated without overflow
        return y * eta - trials * np.logaddexp(0.0, eta)
    return -0.5 * precision * (y - eta) ** 2


def _kernel_into(family, y, eta, trials, precision, out):
    """``_kernel`` written into ``out``; ``eta`` is used as scratch and overwritten."""
    if family is Family.POISSON_LOG:
        np.exp(eta, out=out)
        eta *= y
        return np.subtract(eta, out, out=out)
    if family is Family.BINOMIAL_LOGIT:
        np.logaddexp(0.0, eta, out=out)
        out *= trials
        eta *= y
        return np.subtract(eta, out, out=out)
    np.subtract(y, eta, out=out)
    out *= out
    out *= -0.5 * precision
    return out


def _grad(family, y, eta, trials, precision):
    if family is Family.POISSON_LOG:
        return y - np.exp(eta)
    if family is Family.BINOMIAL_LOGIT:
        return y - trials * expit(eta)
    return precision * (y - eta)


def _hess(family, y, eta, trials, precision):
    if family is Family.POISSON_LOG:
        return -np.exp(eta)
    if family is Family.BINOMIAL_LOGIT:
        p = expit(eta)
        return -trials * p * (1.0 - p)
    return np.full(np.shape(eta), -float(precision))


def loglik(family, y, eta, trials=None, precision=None):
    """Per-observation log-likelihood ``g(eta)``."""
    family = Family.parse(family)
    validate_observations(family, y, trials, precision)
    y = np.asarray(y, dtype=float)
    eta = _check_eta(eta)
    n = None if trials is None else np.asarray(trials, dtype=float)
    return _kernel(family, y, eta, n, precision) + _log_normaliser(family, y, n, precision)


def dloglik(family, y, eta, trials=None, precision=None):
    """First derivative ``g'(eta)``."""
    family = Family.parse(family)
    validate_observations(family, y, trials, precision)
    n = None if trials is None else np.asarray(trials, dtype=float)
    return _grad(family, np.asarray(y, dtype=float), _check_eta(eta), n, precision)


def d2loglik(family, y, eta, trials=None, precision=None):
    """Second derivative ``g''(eta)``."""
    family = Family.parse(family)
    validate_observations(family, y, trials, precision)
    n = None if trials is None else np.asarray(trials, dtype=float)
    return _hess(family, np.asarray(y, dtype=float), _check_eta(eta), n, precision)


@dataclass(frozen=True)
class TaylorCoefficients:
    a: float
    b: np.ndarray
    c: np.ndarray
    expansion_point: np.ndarray


@dataclass(frozen=True, eq=False)
class Likelihood:
    """Observation model bound to its data.

    ``trials`` is required for the binomial family and ``precision`` for the
    Gaussian family. The log-normalising constants are computed once.
    """

    family: Family
    y: np.ndarray
    trials: np.ndarray | None = None
    precision: float | None = None
    _const: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        family = Family.parse(self.family)
        y = np.asarray(self.y, dtype=float).ravel()
        trials = None
        if family is Family.BINOMIAL_LOGIT:
            trials = np.broadcast_to(np.asarray(self.trials, dtype=float), y.shape).copy() \
                if self.trials is not None else None
        precision = float(self.precision) if self.precision is not None else None
        validate_observations(family, y, trials, precision)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "precision", precision)
        object.__setattr__(self, "_const", _log_normaliser(family, y, trials, precision))

    @property
    def n(self) -> int:
        return self.y.size

    def logpdf(self, eta):
        """Per-observation log-likelihood. ``eta`` may carry trailing axes."""
        eta = np.asarray(eta, dtype=float)
        extra = (slice(None),) + (None,) * (eta.ndim - 1)
        y = self.y[extra]
        n = None if self.trials is None else self.trials[extra]
        return _kernel(self.family, y, eta, n, self.precision) + self._const[extra]

    def kernel(self, eta):
        """Per-observation log-likelihood without the constant normaliser."""
        eta = np.asarray(eta, dtype=float)
        extra = (slice(None),) + (None,) * (eta.ndim - 1)
        n = None if self.trials is None else self.trials[extra]
        return _kernel(self.family, self.y[extra], eta, n, self.precision)

    def kernel_into(self, eta, out):
        """``kernel`` for ``eta`` of shape ``(k, n)`` (observations last), written
        into ``out``. ``eta`` is used as scratch and overwritten."""
        return _kernel_into(self.family, self.y, eta, self.trials, self.precision, out)

    @property
    def log_normaliser(self) -> np.ndarray:
        return self._const.copy()

    def total(self, eta) -> float:
        return float(np.sum(self.logpdf(eta), axis=0))

    def grad(self, eta):
        return _grad(self.family, self.y, np.asarray(eta, dtype=float), self.trials, self.precision)

    def hess(self, eta):
        return _hess(self.family, self.y, np.asarray(eta, dtype=float), self.trials, self.precision)

    def taylor(self, eta0) -> TaylorCoefficients:
        """Second-order expansion coefficients at ``eta0``."""
        eta0 = _check_eta(eta0)
        g = self.logpdf(eta0)
        g1 = self.grad(eta0)
        g2 = self.hess(eta0)
        a = float(np.sum(g - g1 * eta0 + 0.5 * g2 * eta0 ** 2))
        return TaylorCoefficients(a=a, b=g1 - g2 * eta0, c=-g2, expansion_point=eta0.copy())

    def subset(self, index) -> "Likelihood":
        trials = None if self.trials is None else self.trials[index]
        return Likelihood(self.family, self.y[index], trials, self.precision)


def taylor_coefficients(likelihood: Likelihood, eta0) -> TaylorCoefficients:
    """Gradient-inclusive Taylor coefficients of ``likelihood`` at ``eta0``.

    Where ``g'(eta0) = 0`` these reduce to ``b = -g'' eta0`` and ``c = -g''``.
    """
    return likelihood.taylor(eta0)
