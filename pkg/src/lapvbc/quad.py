"""Gauss-Hermite quadrature for Gaussian expectations of the log-likelihood
and the curvature coefficients used by the mean correction."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .exceptions import NumericalError

SQRT_PI = np.sqrt(np.pi)
DEFAULT_NODES = 15
MIN_SD = 1e-10


@dataclass(frozen=True, eq=False)
class GHQRule:
    """Nodes and weights for integrals against ``exp(-x**2)``."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray


def _orthonormal_hermite(order, x):
    """Values of the orthonormal Hermite polynomials of degree ``order`` and
    ``order - 1`` (weight ``exp(-x**2)``)."""
    prev = np.zeros_like(x)
    cur = np.full_like(x, np.pi ** -0.25)
    for k in range(order):
        prev, cur = cur, x * np.sqrt(2.0 / (k + 1)) * cur - np.sqrt(k / (k + 1)) * prev
    return cur, prev


def _christoffel_sum(order, x):
    prev = np.zeros_like(x)
    cur = np.full_like(x, np.pi ** -0.25)
    total = cur ** 2
    for k in range(order - 1):
        prev, cur = cur, x * np.sqrt(2.0 / (k + 1)) * cur - np.sqrt(k / (k + 1)) * prev
        total += cur ** 2
    return total


@lru_cache(maxsize=None)
def ghq_rule(order: int = DEFAULT_NODES) -> GHQRule:
    """Gauss-Hermite rule from the Jacobi matrix (Golub-Welsch)."""
    if int(order) != order or not 1 <= order <= 100:
        raise ValueError(f"quadrature order must be an integer in 1..100, got {order}")
    order = int(order)
    if order == 1:
        nodes, weights = np.zeros(1), np.array([SQRT_PI])
    else:
        off = np.sqrt(np.arange(1, order) / 2.0)
        nodes = eigh_tridiagonal(np.zeros(order), off, eigvals_only=True)
        # one Newton step on the orthonormal polynomial sharpens the outer nodes
        p_n, p_prev = _orthonormal_hermite(order, nodes)
        nodes = nodes - p_n / (np.sqrt(2.0 * order) * p_prev)
        nodes = 0.5 * (nodes - nodes[::-1])
        # Christoffel weights: a sum of squares keeps tail weights relatively accurate
        weights = 1.0 / _christoffel_sum(order, nodes)
        weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GHQRule(order, nodes, weights)


@dataclass(frozen=True, eq=False)
class LikelihoodCurvature:
    """Quadratic model ``A + B'd + 0.5 d' diag(C) d`` of the expected
    negative log-likelihood in a predictor shift ``d``."""

    A: float
    B: np.ndarray
    C: np.ndarray


def _rule(rule):
    if rule is None:
        return ghq_rule(DEFAULT_NODES)
    if isinstance(rule, GHQRule):
        return rule
    return ghq_rule(int(rule))


def _node_values(likelihood, mean, sd, rule):
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    pts = mean[:, None] + (np.sqrt(2.0) * sd)[:, None] * rule.nodes[None, :]
    g = likelihood.logpdf(pts)
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.all(np.isfinite(g), axis=1))
        raise NumericalError(f"non-finite log-likelihood at observation(s) {bad[:10].tolist()}")
    return g


def expected_negloglik_terms(likelihood, mean, sd, rule=None) -> np.ndarray:
    """Per-observation ``E[-log f(y_i | X)]`` for ``X ~ N(mean_i, sd_i^2)``."""
    rule = _rule(rule)
    g = _node_values(likelihood, mean, sd, rule)
    return -(g @ rule.weights) / SQRT_PI


def expected_negloglik(likelihood, mean, sd, rule=None) -> float:
    """Quadrature approximation of ``sum_i E[-log f(y_i | X_i)]``.

    ``mean`` is the (possibly shifted) predictor mean and ``sd`` the
    predictor marginal standard deviations.
    """
    return float(np.sum(expected_negloglik_terms(likelihood, mean, sd, rule)))


class CurvatureEvaluator:
    """Curvature coefficients at a fixed predictor spread ``sd``.

    The scaled node offsets and the work buffers are set up once, so
    repeated evaluations at different means (as in the correction loop)
    only pay for the kernel and one small matrix product.
    """

    def __init__(self, likelihood, sd, rule=None):
        rule = _rule(rule)
        sd = np.array(sd, dtype=float)
        if np.any(sd < MIN_SD):
            bad = np.flatnonzero(sd < MIN_SD)
            raise NumericalError(f"degenerate marginal standard deviation at observation(s) "
                                 f"{bad[:10].tolist()}")
        x, w = rule.nodes, rule.weights
        self.likelihood = likelihood
        self.rule = rule
        self.sd = sd
        # node-major layout keeps the inner loops running over observations
        self._offsets = np.multiply.outer(x, np.sqrt(2.0) * sd)
        self._pts = np.empty_like(self._offsets)
        self._g = np.empty_like(self._offsets)
        self._weights = np.vstack([w, w * np.sqrt(2.0) * x, w * (2.0 * x ** 2 - 1.0)])
        self._const = float(np.sum(likelihood.log_normaliser))

    def __call__(self, mean) -> LikelihoodCurvature:
        mean = np.asarray(mean, dtype=float)
        pts, g, rule = self._pts, self._g, self.rule
        np.add(self._offsets, mean, out=pts)
        self.likelihood.kernel_into(pts, g)
        if not np.isfinite(g).all():
            bad = np.flatnonzero(~np.all(np.isfinite(g), axis=0))
            raise NumericalError(f"non-finite log-likelihood at observation(s) {bad[:10].tolist()}")
        # remove the node-independent part to limit cancellation; both moment weights sum to zero
        centre = g[rule.order // 2].copy() if rule.order % 2 else g.mean(axis=0)
        g -= centre
        moments = self._weights @ g
        total = -(float(np.sum(moments[0])) + float(np.sum(centre)) * float(np.sum(rule.weights))) \
            / SQRT_PI - self._const
        b = moments[1]
        b /= -SQRT_PI * self.sd
        c = moments[2]
        c /= -SQRT_PI * self.sd ** 2
        return LikelihoodCurvature(A=total, B=b, C=c)


def curvature_coefficients(likelihood, mean, sd, rule=None) -> LikelihoodCurvature:
    """First and second derivatives of the expected negative log-likelihood
    with respect to a shift of each predictor mean.

    Uses Gaussian integration by parts, ``d/dm E[h(m + sZ)] = E[h Z]/s`` and
    ``d2/dm2 E[h(m + sZ)] = E[h (Z^2 - 1)]/s^2``, so only log-likelihood
    values at the nodes are needed.
    """
    return CurvatureEvaluator(likelihood, sd, rule)(mean)
