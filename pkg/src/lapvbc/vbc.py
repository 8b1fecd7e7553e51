"""Variational mean correction of a Gaussian approximation.

The corrected approximation keeps the precision ``Q`` of the fit and shifts
its mean by ``delta = Q^{-1}[:, J] lam``, i.e. by adding ``lam`` to the
linear Taylor term of the nodes in ``J``. ``lam`` minimises

    E_{N(mu + delta, Q^-1)}[-log l(X | y)] + 0.5 (mu + delta)' Q_prior (mu + delta),

the part of the variational objective (expected negative log-likelihood
plus KL divergence to the prior) that depends on the mean.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import gammaln

from .exceptions import DivergenceError, ModelError, NotPositiveDefiniteError, NumericalError
from .gmrf import SparseSymmetric, factorize, selected_inverse_columns
from .laplace import GaussianApprox
from .likelihood import Family
from .model import EffectKind
from .quad import CurvatureEvaluator, expected_negloglik, ghq_rule

EXP_CAP = 700.0
IDENTITY_TOL = 1e-9


@dataclass(frozen=True)
class CorrectionSet:
    """Ordered effect-space indices whose linear terms receive a correction."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ModelError("correction set is empty")
        if len(set(idx)) != len(idx):
            raise ModelError("correction set indices must be distinct")
        object.__setattr__(self, "indices", idx)

    @property
    def p(self) -> int:
        return len(self.indices)

    def validate(self, m_star):
        if min(self.indices) < 0 or max(self.indices) >= m_star:
            raise ModelError(f"correction index out of range 0..{m_star - 1}")
        return self


def default_correction_set(layout) -> CorrectionSet:
    """All fixed effects, or the smallest effect block when there are none."""
    if not layout.blocks:
        raise ModelError("empty latent field")
    fixed = [b.offset for b in layout.blocks if b.kind is EffectKind.FIXED]
    if fixed:
        return CorrectionSet(tuple(fixed))
    smallest = min(layout.blocks, key=lambda b: b.size)
    return CorrectionSet(tuple(range(smallest.offset, smallest.offset + smallest.size)))


def _as_set(ga, J):
    if J is None:
        J = default_correction_set(ga.problem.layout)
    elif not isinstance(J, CorrectionSet):
        J = CorrectionSet(tuple(np.atleast_1d(J).tolist()))
    return J.validate(ga.problem.m_star)


@dataclass(frozen=True, eq=False)
class CorrectionResult:
    J: np.ndarray
    lam: np.ndarray
    delta: np.ndarray
    delta_eta: np.ndarray
    mean: np.ndarray
    mean_eta: np.ndarray
    objective_trace: tuple
    iterations: int
    converged: bool
    method: str
    identity_residual: float

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _solve_small(h, rhs):
    """Solve the symmetric p x p system; minimal-norm fallback when singular."""
    try:
        cf = sla.cho_factor(h, lower=True, check_finite=True)
        diag = np.abs(np.diag(cf[0]))
        if diag.min() > 1e-8 * max(diag.max(), 1e-300):
            return sla.cho_solve(cf, rhs)
    except sla.LinAlgError:
        pass
    warnings.warn("correction system is singular (collinear correction directions); "
                  "using the minimal-norm solution", RuntimeWarning)
    return sla.lstsq(h, rhs, lapack_driver="gelsy")[0]


def solve_lambda(B, C, M, prior, mean, design):
    """Minimiser over ``lam`` of the quadratic model

        B'(A M lam) + 0.5 (A M lam)' diag(C) (A M lam)
        + 0.5 (mean + M lam)' Q_prior (mean + M lam).

    ``B`` and ``C`` live on the predictors, ``M`` holds the selected columns
    of ``Q^{-1}`` and ``design`` is ``A``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    am = design @ M
    qm = prior @ M
    h = am.T @ (np.asarray(C)[:, None] * am) + M.T @ qm
    g = am.T @ np.asarray(B) + qm.T @ np.asarray(mean)
    return _solve_small(h, -g)


def _ghq_evaluator(likelihood, sd_eta, rule):
    curvature = CurvatureEvaluator(likelihood, sd_eta, rule)

    def evaluate(mean_eta):
        cc = curvature(mean_eta)
        return cc.A, cc.B, cc.C
    return evaluate


def _exact_poisson_evaluator(likelihood, sd_eta):
    y = likelihood.y
    log_fact = gammaln(y + 1.0)
    half_var = 0.5 * sd_eta ** 2

    def evaluate(mean_eta):
        z = mean_eta + half_var
        if np.any(z > EXP_CAP):
            warnings.warn(f"exponent above {EXP_CAP} capped in exact Poisson objective",
                          RuntimeWarning)
            z = np.minimum(z, EXP_CAP)
        e = np.exp(z)
        value = float(np.sum(e - y * mean_eta + log_fact))
        return value, e - y, e
    return evaluate


def _run(ga: GaussianApprox, basis, evaluate, step_solver, tol, max_iter, method, J_idx,
         lam_from_delta=None):
    problem = ga.problem
    a = problem.design
    qpi = problem.prior
    am = a @ basis
    if sp.issparse(am):
        am = am.tocsr()
    mu, mu_eta = ga.mean, ga.mean_eta

    def state(lam):
        delta = basis @ lam
        delta_eta = am @ lam
        return delta, delta_eta, mu + delta, mu_eta + delta_eta

    def objective(lik_value, mean):
        return lik_value + 0.5 * float(mean @ (qpi @ mean))

    p = basis.shape[1]
    lam = np.zeros(p)
    delta, delta_eta, mean, mean_eta = state(lam)
    lik_value, B, C = evaluate(mean_eta)
    f = objective(lik_value, mean)
    trace = [f]
    increases = 0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        step = step_solver(am, B, C, mean)
        if np.max(np.abs(step)) < tol:
            # the remaining Newton update is below tolerance; no need to evaluate it
            converged = True
            break
        t = 1.0
        while True:
            cand = lam + t * step
            c_delta, c_delta_eta, c_mean, c_mean_eta = state(cand)
            c_lik, c_B, c_C = evaluate(c_mean_eta)
            c_f = objective(c_lik, c_mean)
            if c_f <= f + 1e-12 * max(1.0, abs(f)) or t < 2.0 ** -20:
                break
            t *= 0.5
        if c_f > f + 1e-10 * max(1.0, abs(f)):
            increases += 1
            if increases >= 2:
                raise DivergenceError("correction objective increased twice in a row",
                                      trace=trace + [c_f])
        else:
            increases = 0
        lam = cand
        delta, delta_eta, mean, mean_eta = c_delta, c_delta_eta, c_mean, c_mean_eta
        lik_value, B, C, f = c_lik, c_B, c_C, c_f
        trace.append(f)
    if not converged:
        warnings.warn(f"correction did not converge in {max_iter} iterations", RuntimeWarning)

    lam_out = lam if lam_from_delta is None else lam_from_delta(delta)
    padded = np.zeros(problem.m_star)
    padded[J_idx] = lam_out
    resid = ga.precision @ mean - a.T @ ga.b - padded
    # componentwise backward-error scale, robust to badly scaled precisions
    scale = max(1.0, float(np.max(abs(ga.precision.tocsc()) @ np.abs(mean))))
    residual = float(np.max(np.abs(resid))) / scale
    if residual > IDENTITY_TOL:
        raise NumericalError(f"corrected mean violates Q mu* = b + lam (relative residual "
                             f"{residual:.3g})")
    return CorrectionResult(J=np.asarray(J_idx), lam=lam_out, delta=delta, delta_eta=delta_eta,
                            mean=mean, mean_eta=mean_eta, objective_trace=tuple(trace),
                            iterations=it, converged=converged, method=method,
                            identity_residual=residual)


def _low_rank(ga, J, evaluate, tol, max_iter, method):
    J = _as_set(ga, J)
    idx = np.asarray(J.indices)
    M = selected_inverse_columns(ga.factor, idx)
    qpi = ga.problem.prior
    qm = qpi @ M
    mqm = M.T @ qm

    def step_solver(am, B, C, mean):
        h = am.T @ (C[:, None] * am) + mqm
        g = am.T @ B + qm.T @ mean
        return _solve_small(h, -g)

    return _run(ga, M, evaluate, step_solver, tol, max_iter, method, idx)


def _rule_of(rule, n_nodes):
    return rule if rule is not None else ghq_rule(n_nodes)


def vbc_correct(ga: GaussianApprox, J=None, tol=1e-8, max_iter=20, rule=None,
                n_nodes=15) -> CorrectionResult:
    """Low-rank mean correction with quadrature-based curvature.

    ``J`` holds effect-space indices (default: all fixed effects). Each outer
    iteration refreshes ``B`` and ``C`` at the current corrected predictor
    mean with the marginal standard deviations of ``ga`` held fixed, then
    solves the ``p x p`` stationarity system. Stops once the update of
    ``lam`` is below ``tol``.
    """
    evaluate = _ghq_evaluator(ga.problem.likelihood, ga.sd_eta, _rule_of(rule, n_nodes))
    return _low_rank(ga, J, evaluate, tol, max_iter, "ghq")


def vbc_correct_exact_poisson(ga: GaussianApprox, J=None, tol=1e-8, max_iter=20) -> CorrectionResult:
    """Low-rank correction using the closed-form Poisson expectation
    ``exp(m + s^2/2) - y m + log y!``."""
    if ga.problem.likelihood.family is not Family.POISSON_LOG:
        raise ModelError("exact expected log-likelihood is only available for Poisson")
    evaluate = _exact_poisson_evaluator(ga.problem.likelihood, ga.sd_eta)
    return _low_rank(ga, J, evaluate, tol, max_iter, "exact-poisson")


def vbc_correct_full_rank(ga: GaussianApprox, tol=1e-8, max_iter=20, rule=None,
                          n_nodes=15) -> CorrectionResult:
    """Correction over the full effect space, solved directly for ``delta``.

    The reported ``lam`` is ``Q delta``.
    """
    problem = ga.problem
    evaluate = _ghq_evaluator(problem.likelihood, ga.sd_eta, _rule_of(rule, n_nodes))
    qpi = problem.prior.tocsc()
    ordering = ga.ordering

    def step_solver(am, B, C, mean):
        h = (am.T @ sp.diags(C) @ am + qpi).tocsc()
        try:
            handle = factorize(h, ordering)
        except NotPositiveDefiniteError:
            return sla.lstsq(h.toarray(), -(am.T @ B + qpi @ mean), lapack_driver="gelsy")[0]
        return handle.solve(-(am.T @ B + qpi @ mean))

    basis = sp.identity(problem.m_star, format="csr")
    return _run(ga, basis, evaluate, step_solver, tol, max_iter, "full-rank",
                np.arange(problem.m_star), lam_from_delta=lambda d: ga.precision @ d)


def vbc_from_mle(mle: GaussianApprox, J=None, tol=1e-8, max_iter=20, rule=None,
                 n_nodes=15) -> CorrectionResult:
    """Bayesian correction of a maximum likelihood fit.

    ``Q`` and the marginal standard deviations come from the likelihood
    Hessian; the prior enters only through the correction objective.
    """
    if mle.kind != "mle":
        raise ModelError("vbc_from_mle expects the result of mle_fit")
    return vbc_correct(mle, J, tol=tol, max_iter=max_iter, rule=rule, n_nodes=n_nodes)


def _dense(q):
    if isinstance(q, SparseSymmetric):
        return q.toarray()
    if sp.issparse(q):
        return q.toarray()
    return np.atleast_2d(np.asarray(q, dtype=float))


def kld_gaussian(mu1, q1, mu0, q0) -> float:
    """``KL[N(mu1, q1^-1) || N(mu0, q0^-1)]`` for precision matrices ``q1``, ``q0``."""
    q1d, q0d = _dense(q1), _dense(q0)
    m = q1d.shape[0]
    try:
        c1 = sla.cho_factor(q1d, lower=True)
        c0 = sla.cho_factor(q0d, lower=True)
    except sla.LinAlgError:
        raise NotPositiveDefiniteError("KL divergence needs positive definite precisions") from None
    logdet1 = 2.0 * np.sum(np.log(np.diag(c1[0])))
    logdet0 = 2.0 * np.sum(np.log(np.diag(c0[0])))
    trace = float(np.trace(sla.cho_solve(c1, q0d)))
    d = np.atleast_1d(np.asarray(mu1, dtype=float) - np.asarray(mu0, dtype=float))
    return 0.5 * (trace + float(d @ q0d @ d) - m - logdet0 + logdet1)
