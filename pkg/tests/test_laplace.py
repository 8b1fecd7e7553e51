import warnings
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from scipy import optimize
from scipy.special import lambertw

from conftest import build_problem, gaussian_closed_form, random_gaussian_problem
from lapvbc.exceptions import NotPositiveDefiniteError, SingularHessianError
from lapvbc.gmrf import SparseSymmetric, block_precision
from lapvbc.laplace import fit_laplace, mle_fit
from lapvbc.model import BlockSlot, EffectKind, EffectSpec, LatentLayout
from lapvbc.problem import augment


def test_single_poisson_zero_count_mode():
    # mode of y*x - e^x - x^2/2 with y=0 solves x = -e^x, i.e. x = -W(1)
    prob = build_problem("poisson", [0], [EffectSpec("b0", "fixed", prior_precision=1.0)])
    ga = fit_laplace(prob)
    omega = -lambertw(1.0).real
    assert ga.mean[0] == pytest.approx(omega, abs=1e-9)
    assert ga.mean[0] == pytest.approx(-0.567143, abs=1e-6)
    assert ga.precision.toarray()[0, 0] == pytest.approx(1.0 + np.exp(omega), rel=1e-8)
    assert ga.sd[0] == pytest.approx((1.0 + np.exp(omega)) ** -0.5, rel=1e-8)


def test_intercept_only_poisson_weak_prior():
    y = np.full(40, 2.0)
    prob = build_problem("poisson", y, [EffectSpec("b0", "fixed")])
    ga = fit_laplace(prob)
    root = optimize.brentq(lambda b: y.sum() - y.size * np.exp(b) - 0.001 * b, -5, 5, xtol=1e-14)
    assert ga.mean[0] == pytest.approx(root, abs=1e-10)
    assert ga.mean[0] == pytest.approx(np.log(2.0), abs=2e-5)


def test_mle_logistic_matches_optimizer():
    rng = np.random.default_rng(11)
    n = 80
    x = rng.normal(size=n)
    trials = rng.integers(1, 4, n)
    y = rng.binomial(trials, 1 / (1 + np.exp(-(0.3 + 0.8 * x))))
    prob = build_problem("binomial", y, [EffectSpec("b0", "fixed"),
                                         EffectSpec("b1", "fixed", covariate="x")],
                         {"x": x}, trials=trials)
    mle = mle_fit(prob)
    a = prob.design.toarray()

    def nll(beta):
        eta = a @ beta
        return -(y @ eta - trials @ np.logaddexp(0, eta))
    ref = optimize.minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-10}).x
    assert np.allclose(mle.mean, ref, atol=1e-6)
    assert mle.kind == "mle"
    assert np.max(np.abs(mle.gradient())) < 1e-8


def test_poisson_random_effect_mode_matches_optimizer():
    rng = np.random.default_rng(5)
    n, groups = 60, 8
    g = rng.integers(1, groups + 1, n).astype(float)
    x = rng.normal(size=n)
    y = rng.poisson(np.exp(0.2 + 0.4 * x + rng.normal(0, 0.5, groups)[(g - 1).astype(int)]))
    prob = build_problem("poisson", y, [EffectSpec("b0", "fixed"),
                                        EffectSpec("b1", "fixed", covariate="x"),
                                        EffectSpec("u", "iid", size=groups, index="g",
                                                   prior_precision=4.0)],
                         {"x": x, "g": g})
    ga = fit_laplace(prob)
    ref = optimize.minimize(lambda v: -prob.log_posterior(v), np.zeros(prob.m_star),
                            jac=lambda v: -prob.gradient(v), method="BFGS",
                            options={"gtol": 1e-10}).x
    assert np.allclose(ga.mean, ref, atol=1e-6)
    scale = max(1.0, np.max(np.abs(ga.precision @ ga.mean)))
    assert np.max(np.abs(ga.residual())) / scale < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_gaussian_model_is_exact(seed):
    prob = random_gaussian_problem(np.random.default_rng(seed), with_iid=True)
    ga = fit_laplace(prob)
    mean, q = gaussian_closed_form(prob)
    assert np.allclose(ga.mean, mean, atol=1e-10)
    assert np.allclose(ga.precision.toarray(), q, atol=1e-10)
    # the first solve is exact; the second pass only confirms it
    assert ga.iterations <= 2


def test_warm_start_is_idempotent(poisson50):
    ga = fit_laplace(poisson50)
    again = fit_laplace(poisson50, init=ga.mean)
    assert again.iterations == 1
    assert np.allclose(again.mean, ga.mean, atol=1e-12)


def test_augmented_representation_agrees():
    rng = np.random.default_rng(9)
    n = 15
    x = rng.normal(size=n)
    y = rng.poisson(np.exp(-0.5 + 0.5 * x))
    prob = build_problem("poisson", y, [EffectSpec("b0", "fixed"),
                                        EffectSpec("b1", "fixed", covariate="x")], {"x": x})
    ga = fit_laplace(prob)
    aug = fit_laplace(augment(prob))
    assert np.allclose(aug.mean[:n], ga.mean_eta, atol=1e-5)
    assert np.allclose(aug.mean[n:], ga.mean, atol=1e-5)
    assert np.allclose(aug.sd[:n], ga.sd_eta, atol=1e-5)


def test_rw2_smoother_gaussian_closed_form():
    n = 30
    t = np.arange(1, n + 1, dtype=float)
    y = np.sin(t / 5) + np.random.default_rng(1).normal(0, 0.2, n)
    prob = build_problem("gaussian", y, [EffectSpec("s", "rw2", size=n, index="t",
                                                    prior_precision=20.0)],
                         {"t": t}, precision=25.0)
    ga = fit_laplace(prob)
    mean, _ = gaussian_closed_form(prob)
    assert np.allclose(ga.mean, mean, atol=1e-9)


def test_collinear_covariates_make_mle_singular():
    x = np.linspace(-1, 1, 10)
    prob = build_problem("poisson", np.arange(10) % 3,
                         [EffectSpec("b1", "fixed", covariate="x"),
                          EffectSpec("b2", "fixed", covariate="x2")], {"x": x, "x2": 2 * x})
    with pytest.raises(SingularHessianError) as info:
        mle_fit(prob)
    d = info.value.directions
    assert d.shape == (2, 1)
    assert abs(d[0, 0] * 1 + d[1, 0] * 2) < 1e-8  # direction (2, -1) up to scale


def test_unidentified_intrinsic_direction_is_reported():
    # rw1 block whose nodes are never observed leaves its level unidentified
    prob = build_problem("poisson", [1, 0, 2], [EffectSpec("b0", "fixed")])
    q_rw1, _ = block_precision("rw1", 4, 1.0)
    prior = SparseSymmetric.from_matrix(sp.block_diag([prob.prior.tocsc(), q_rw1]))
    design = sp.hstack([prob.design, sp.csr_matrix((3, 4))]).tocsr()
    layout = LatentLayout(3, prob.layout.blocks + (BlockSlot("w", EffectKind.RW1, 1, 4),))
    bad = replace(prob, design=design, prior=prior, layout=layout)
    with pytest.raises(NotPositiveDefiniteError, match="'w'"):
        fit_laplace(bad)


def test_nonconvergence_warns(poisson50):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ga = fit_laplace(poisson50, max_iter=1)
    assert not ga.converged
    assert any("did not converge" in str(w.message) for w in caught)


def test_three_count_intercept_is_near_log_mean():
    prob = build_problem("poisson", [1, 2, 3], [EffectSpec("b0", "fixed", prior_precision=0.001)])
    ga = fit_laplace(prob)
    assert ga.converged
    assert 0 < np.log(2.0) - ga.mean[0] < 1e-3
