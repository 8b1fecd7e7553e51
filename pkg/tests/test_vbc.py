import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize
from scipy.stats import multivariate_normal

from conftest import build_problem, gaussian_closed_form, random_gaussian_problem
from lapvbc.exceptions import DivergenceError, ModelError, NotPositiveDefiniteError
from lapvbc.gmrf import selected_inverse_columns
from lapvbc.laplace import fit_laplace, mle_fit
from lapvbc.model import EffectSpec
from lapvbc.quad import curvature_coefficients, expected_negloglik
from lapvbc.vbc import (CorrectionSet, _run, _solve_small, kld_gaussian, solve_lambda,
                        vbc_correct, vbc_correct_exact_poisson, vbc_correct_full_rank,
                        vbc_from_mle)


def objective(ga, lam, J, n_nodes=15):
    """Expected negative log-likelihood plus prior quadratic at mean + M lam."""
    prob = ga.problem
    M = selected_inverse_columns(ga.factor, J)
    mean = ga.mean + M @ np.atleast_1d(lam)
    e = expected_negloglik(prob.likelihood, prob.design @ mean, ga.sd_eta, n_nodes)
    return e + 0.5 * mean @ (prob.prior @ mean)


@pytest.fixture(scope="module")
def mixed_poisson():
    rng = np.random.default_rng(21)
    n, groups = 40, 5
    g = rng.integers(1, groups + 1, n).astype(float)
    x = rng.normal(size=n)
    y = rng.poisson(np.exp(-0.8 + 0.5 * x + rng.normal(0, 0.6, groups)[(g - 1).astype(int)]))
    prob = build_problem("poisson", y, [EffectSpec("b0", "fixed"),
                                        EffectSpec("b1", "fixed", covariate="x"),
                                        EffectSpec("u", "iid", size=groups, index="g",
                                                   prior_precision=3.0)],
                         {"x": x, "g": g})
    return fit_laplace(prob)


@pytest.mark.parametrize("seed", range(6))
def test_gaussian_likelihood_needs_no_correction(seed):
    prob = random_gaussian_problem(np.random.default_rng(100 + seed), with_iid=True)
    ga = fit_laplace(prob)
    truth, _ = gaussian_closed_form(prob)
    for res in (vbc_correct(ga, CorrectionSet(tuple(range(prob.m_star)))),
                vbc_correct(ga, CorrectionSet((0,))), vbc_correct_full_rank(ga)):
        assert np.max(np.abs(res.lam)) < 1e-8
        assert np.allclose(res.mean, truth, atol=1e-8)


def test_objective_never_increases(mixed_poisson):
    for J in ((0,), (0, 1), (2, 5), tuple(range(7))):
        res = vbc_correct(mixed_poisson, CorrectionSet(J))
        trace = np.array(res.objective_trace)
        assert trace[-1] <= trace[0] + 1e-10
        assert np.all(np.diff(trace) <= 1e-10 * np.abs(trace[:-1]))
        assert res.converged and res.identity_residual < 1e-9


def test_nesting(mixed_poisson):
    chain = [(0,), (0, 1), (0, 1, 3), (0, 1, 2, 3, 4), tuple(range(7))]
    values = [vbc_correct(mixed_poisson, CorrectionSet(J)).objective for J in chain]
    assert np.all(np.diff(values) <= 1e-10)


def test_low_rank_with_all_indices_equals_full_rank(mixed_poisson):
    low = vbc_correct(mixed_poisson, CorrectionSet(tuple(range(7))))
    full = vbc_correct_full_rank(mixed_poisson)
    assert np.allclose(low.mean, full.mean, atol=1e-8)
    assert np.allclose(low.lam, full.lam, atol=1e-8)


def test_scalar_correction_matches_direct_minimisation(mixed_poisson):
    res = vbc_correct(mixed_poisson, CorrectionSet((0,)), tol=1e-12)
    ref = optimize.minimize_scalar(lambda l: objective(mixed_poisson, l, [0]),
                                   bracket=(-1.0, 1.0), method="brent", tol=1e-12)
    assert res.lam[0] == pytest.approx(ref.x, abs=1e-6)
    assert res.objective == pytest.approx(ref.fun, rel=1e-12)


def test_two_dimensional_correction_matches_nelder_mead(mixed_poisson):
    res = vbc_correct(mixed_poisson, CorrectionSet((0, 1)), tol=1e-12)
    ref = optimize.minimize(lambda l: objective(mixed_poisson, l, [0, 1]), np.zeros(2),
                            method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    assert np.allclose(res.lam, ref.x, atol=1e-5)


def test_exact_poisson_agrees_with_quadrature(poisson50):
    ga = fit_laplace(poisson50)
    a = vbc_correct(ga)
    b = vbc_correct_exact_poisson(ga)
    assert np.max(np.abs(a.lam - b.lam)) < 1e-6
    with pytest.raises(ModelError):
        vbc_correct_exact_poisson(fit_laplace(random_gaussian_problem(np.random.default_rng(0))))


def test_correction_moves_towards_exact_posterior_mean(poisson50):
    ga = fit_laplace(poisson50)
    res = vbc_correct(ga)
    # 2-D grid posterior mean as the reference
    x = poisson50.design.toarray()[:, 1]
    y = poisson50.likelihood.y
    g0 = np.linspace(ga.mean[0] - 7 * ga.sd[0], ga.mean[0] + 7 * ga.sd[0], 301)
    g1 = np.linspace(ga.mean[1] - 7 * ga.sd[1], ga.mean[1] + 7 * ga.sd[1], 301)
    b0, b1 = np.meshgrid(g0, g1, indexing="ij")
    eta = b0[..., None] + b1[..., None] * x
    lp = (y * eta - np.exp(eta)).sum(-1) - 0.0005 * (b0 ** 2 + b1 ** 2)
    w = np.exp(lp - lp.max())
    w /= w.sum()
    truth = np.array([(w * b0).sum(), (w * b1).sum()])
    assert np.all(np.abs(res.mean - truth) < np.abs(ga.mean - truth))


def test_identity_holds(mixed_poisson):
    res = vbc_correct(mixed_poisson, CorrectionSet((1, 4)))
    padded = np.zeros(7)
    padded[[1, 4]] = res.lam
    lhs = mixed_poisson.precision @ res.mean
    rhs = mixed_poisson.problem.design.T @ mixed_poisson.b + padded
    assert np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(lhs))) < 1e-9


def test_solve_lambda_matches_newton_step(mixed_poisson):
    ga = mixed_poisson
    J = [0, 3]
    M = selected_inverse_columns(ga.factor, J)
    cc = curvature_coefficients(ga.problem.likelihood, ga.mean_eta, ga.sd_eta)
    lam = solve_lambda(cc.B, cc.C, M, ga.problem.prior, ga.mean, ga.problem.design)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        res = vbc_correct(ga, CorrectionSet(tuple(J)), max_iter=1)
    assert np.allclose(lam, res.lam, atol=1e-12)


def test_singular_system_uses_minimal_norm():
    h = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.warns(RuntimeWarning, match="minimal-norm"):
        x = _solve_small(h, np.array([2.0, 2.0]))
    assert np.allclose(x, [1.0, 1.0])


def test_divergence_detected(poisson50):
    ga = fit_laplace(poisson50)
    calls = iter(range(1000))

    def rising(mean_eta):
        k = next(calls)
        return float(k), np.ones_like(mean_eta), np.ones_like(mean_eta)

    def solver(am, B, C, mean):
        return np.ones(am.shape[1])

    M = selected_inverse_columns(ga.factor, [0])
    with pytest.raises(DivergenceError) as info:
        _run(ga, M, rising, solver, 1e-8, 20, "test", np.array([0]))
    assert len(info.value.trace) >= 3


def test_cost_is_linear_in_latent_dimension():
    def timed(m):
        rng = np.random.default_rng(m)
        n = 2 * m
        g = rng.integers(1, m + 1, n).astype(float)
        x = rng.normal(size=n)
        y = rng.poisson(np.exp(-0.5 + 0.3 * x))
        prob = build_problem("poisson", y, [EffectSpec("b0", "fixed"),
                                            EffectSpec("b1", "fixed", covariate="x"),
                                            EffectSpec("u", "iid", size=m, index="g",
                                                       prior_precision=2.0)],
                             {"x": x, "g": g})
        ga = fit_laplace(prob)
        best = np.inf
        for _ in range(5):
            t0 = time.perf_counter()
            vbc_correct(ga, CorrectionSet((0, 1)))
            best = min(best, time.perf_counter() - t0)
        return best
    assert timed(40_000) <= 2.5 * timed(20_000)


# maximum likelihood variant

def _intercept_problem(y, prior_precision):
    return build_problem("poisson", y, [EffectSpec("b0", "fixed",
                                                   prior_precision=prior_precision)])


def _posterior_mean_1d(y, tau):
    f = lambda b: np.exp(y.sum() * b - y.size * np.exp(b) - 0.5 * tau * b * b
                         - (y.sum() * np.log(y.mean()) - y.sum()))
    z = integrate.quad(f, -10, 5, points=[np.log(y.mean())])[0]
    return integrate.quad(lambda b: b * f(b), -10, 5, points=[np.log(y.mean())])[0] / z


def test_mle_correction_between_mle_and_prior_mean():
    y = np.random.default_rng(0).poisson(1.0, 20).astype(float)
    mle = mle_fit(_intercept_problem(y, 1.0))
    res = vbc_from_mle(mle, max_iter=50)
    lo, hi = sorted((np.log(y.mean()), 0.0))
    assert lo < res.mean[0] < hi
    assert res.mean[0] == pytest.approx(_posterior_mean_1d(y, 1.0), abs=5e-3)


def test_mle_correction_with_vanishing_prior_keeps_jensen_shift():
    # without a prior the objective is the expected likelihood alone, whose
    # minimiser for an intercept is log(mean y) - S^2/2, not the MLE
    y = np.random.default_rng(1).poisson(2.0, 30).astype(float)
    mle = mle_fit(_intercept_problem(y, 1e-12))
    res = vbc_from_mle(mle, max_iter=50)
    s2 = mle.sd_eta[0] ** 2
    assert res.mean[0] == pytest.approx(np.log(y.mean()) - s2 / 2, abs=1e-9)


def test_mle_correction_matches_weak_prior_laplace_correction():
    y = np.random.default_rng(2).poisson(1.5, 25).astype(float)
    prob = _intercept_problem(y, 1e-8)
    a = vbc_from_mle(mle_fit(prob))
    b = vbc_correct(fit_laplace(prob))
    assert a.mean[0] == pytest.approx(b.mean[0], abs=1e-7)


def test_mle_variant_requires_mle_fit(poisson50):
    with pytest.raises(ModelError):
        vbc_from_mle(fit_laplace(poisson50))


# Kullback-Leibler divergence

def test_kld_known_values():
    assert kld_gaussian([1.0], [[1.0]], [0.0], [[0.5]]) == pytest.approx(0.5 * np.log(2), abs=1e-12)
    assert kld_gaussian([0.3, 1.0], np.eye(2), [0.3, 1.0], np.eye(2)) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(NotPositiveDefiniteError):
        kld_gaussian([0.0, 0.0], np.eye(2), [0.0, 0.0], np.diag([1.0, 0.0]))


@given(seed=st.integers(0, 10_000), d=st.integers(1, 5))
def test_kld_nonnegative_and_matches_sampling_identity(seed, d):
    rng = np.random.default_rng(seed)
    def spd():
        b = rng.normal(size=(d, d))
        return b @ b.T + 0.5 * np.eye(d)
    q1, q0 = spd(), spd()
    mu1, mu0 = rng.normal(size=d), rng.normal(size=d)
    k = kld_gaussian(mu1, q1, mu0, q0)
    assert k >= -1e-10
    # log-density difference averaged over N(mu1, Q1^-1), via scipy densities
    p1 = multivariate_normal(mu1, np.linalg.inv(q1))
    p0 = multivariate_normal(mu0, np.linalg.inv(q0))
    xs = p1.rvs(size=4000, random_state=seed)
    est = np.mean(p1.logpdf(xs) - p0.logpdf(xs))
    se = np.std(p1.logpdf(xs) - p0.logpdf(xs)) / np.sqrt(4000)
    assert abs(est - k) < 5 * se + 1e-9
