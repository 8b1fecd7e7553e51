"""Gaussian approximation of the latent field by iterated Taylor
linearisation of the likelihood (Newton's method on the log posterior)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .exceptions import NotPositiveDefiniteError, NumericalError, SingularHessianError
from .gmrf import (CholeskyHandle, SparseSymmetric, factorize, fill_reducing_ordering,
                   marginal_variances, predictor_variances)
from .problem import LatentProblem


IDENTITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianApprox:
    """``N(mean, precision^-1)`` over the effects, plus predictor marginals.

    ``b`` and ``c`` are the Taylor coefficients at the final expansion point,
    so that ``precision @ mean == design.T @ b`` up to solver round-off.
    """

    problem: LatentProblem
    mean: np.ndarray
    precision: SparseSymmetric
    factor: CholeskyHandle
    mean_eta: np.ndarray
    sd_eta: np.ndarray
    b: np.ndarray
    c: np.ndarray
    iterations: int
    converged: bool
    kind: str = "laplace"
    step_history: tuple = ()
    ordering: np.ndarray | None = field(default=None, repr=False)

    @cached_property
    def sd(self) -> np.ndarray:
        """Marginal standard deviations of the effects."""
        return np.sqrt(marginal_variances(self.factor))

    def residual(self) -> np.ndarray:
        return self.precision @ self.mean - self.problem.design.T @ self.b

    def gradient(self) -> np.ndarray:
        """Gradient of the fitted objective at ``mean``."""
        p = self.problem
        g = p.design.T @ p.likelihood.grad(self.mean_eta)
        if self.kind == "laplace":
            g = g - p.prior @ self.mean
        return g


def _objective(problem, qpi, x):
    eta = problem.design @ x
    return problem.likelihood.total(eta) - 0.5 * float(x @ (qpi @ x)), eta


def _describe_pivot(problem, pivot):
    if pivot is None:
        return "unknown block"
    try:
        name, off = problem.layout.locate_effect(pivot)
    except IndexError:
        return f"effect index {pivot}"
    return f"block {name!r} (offset {off})"


def _newton(problem: LatentProblem, qpi: sp.csc_matrix, kind, tol, max_iter, init,
            line_search, variance_method):
    a = problem.design
    lik = problem.likelihood
    pattern = abs(qpi) + abs(a.T) @ abs(a)
    ordering = fill_reducing_ordering(pattern)
    x = np.zeros(problem.m_star) if init is None else np.array(init, dtype=float)
    obj, eta = _objective(problem, qpi, x)
    best = None
    steps = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        tc = lik.taylor(eta)
        q = (qpi + a.T @ sp.diags(tc.c) @ a).tocsc()
        try:
            handle = factorize(q, ordering, pivot_tol=1e-12 if kind == "mle" else 0.0)
        except NotPositiveDefiniteError as exc:
            if kind == "mle":
                raise _singular_hessian(q, problem) from None
            raise NotPositiveDefiniteError(
                f"posterior precision not positive definite at {_describe_pivot(problem, exc.pivot)}",
                pivot=exc.pivot) from None
        rhs = a.T @ tc.b
        x_new = handle.solve(rhs)
        step = x_new - x
        dx = float(np.max(np.abs(step))) if step.size else 0.0
        steps.append(dx)
        state = (x, tc, q, handle, x_new)
        if dx < tol:
            converged = True
            best = state
            break
        t = 1.0
        cand_obj, cand_eta = _objective(problem, qpi, x_new)
        if line_search:
            while not cand_obj >= obj - 1e-12 * max(1.0, abs(obj)) and t > 1e-10:
                t *= 0.5
                cand_obj, cand_eta = _objective(problem, qpi, x + t * step)
        x = x + t * step if t < 1.0 else x_new
        obj, eta = cand_obj, cand_eta

    if not converged:
        warnings.warn(f"Newton iteration did not converge in {max_iter} iterations "
                      f"(last step {steps[-1]:.3g})", RuntimeWarning)
        # the line search keeps the objective nondecreasing, so the last iterate is the best
        tc = lik.taylor(eta)
        q = (qpi + a.T @ sp.diags(tc.c) @ a).tocsc()
        handle = factorize(q, ordering)
        best = (x, tc, q, handle, handle.solve(a.T @ tc.b))

    _, tc, q, handle, mean = best
    qmean = q @ mean
    residual = float(np.max(np.abs(qmean - a.T @ tc.b), initial=0.0))
    residual /= max(1.0, float(np.max(abs(q) @ np.abs(mean), initial=0.0)))
    if residual > IDENTITY_TOL:
        raise NumericalError(f"mode violates Q mu = b (relative residual {residual:.3g})")
    mean_eta = a @ mean
    var_eta = predictor_variances(handle, a, method=variance_method)
    return GaussianApprox(problem=problem, mean=mean,
                          precision=SparseSymmetric.from_matrix(q, atol=1e-10),
                          factor=handle, mean_eta=mean_eta, sd_eta=np.sqrt(var_eta),
                          b=tc.b, c=tc.c, iterations=it, converged=converged, kind=kind,
                          step_history=tuple(steps), ordering=ordering)


def _singular_hessian(q, problem):
    dense_limit = 2000
    directions = None
    if q.shape[0] <= dense_limit:
        w, v = np.linalg.eigh(q.toarray())
        small = w <= 1e-10 * max(1.0, abs(w).max())
        directions = v[:, small]
    return SingularHessianError(
        "likelihood Hessian is singular; the effects are not identifiable by maximum "
        "likelihood" + ("" if directions is None else f" ({directions.shape[1]} deficient directions)"),
        directions=directions)


def fit_laplace(problem: LatentProblem, tol=1e-8, max_iter=50, init=None, line_search=True,
                variance_method="auto") -> GaussianApprox:
    """Gaussian approximation at the posterior mode of the effects.

    Iterates ``eta0 <- A mu``, ``(b, c) <- taylor(eta0)``,
    ``Q <- Q_prior + A' diag(c) A``, ``Q mu = A' b`` until the update is below
    ``tol`` in the max norm. Steps are halved when the log posterior would
    decrease.
    """
    return _newton(problem, problem.prior.tocsc(), "laplace", tol, max_iter, init,
                   line_search, variance_method)


def mle_fit(problem: LatentProblem, tol=1e-8, max_iter=50, init=None, line_search=True,
            variance_method="auto") -> GaussianApprox:
    """Maximum likelihood estimate with the observed-information precision.

    Same iteration as :func:`fit_laplace` with a zero prior precision. The
    problem's prior is kept on the result for later corrections.
    """
    qpi = sp.csc_matrix((problem.m_star, problem.m_star))
    return _newton(problem, qpi, "mle", tol, max_iter, init, line_search, variance_method)
