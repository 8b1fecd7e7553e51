"""Metropolis-Hastings sampler over the effects at fixed hyperparameters,
used as the reference for posterior means.

Two move types share the Laplace precision ``Q``: a random walk
``x' = x + s L^{-T} z`` (scale ``s`` adapted during burn-in towards an
acceptance rate of 0.25, then frozen) and an independence proposal
``x' ~ N(mu, Q^{-1})``. Each iteration picks the independence move with
probability ``independence_prob``; both moves satisfy detailed balance, so
the mixture does too.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import SamplerError
from .laplace import GaussianApprox, fit_laplace
from .likelihood import Family

_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class ChainSummary:
    mean: np.ndarray
    sd: np.ndarray
    ess: np.ndarray
    mean_eta: np.ndarray | None
    sd_eta: np.ndarray | None
    acceptance_rate: float
    rw_acceptance_rate: float
    independence_acceptance_rate: float
    scale: float
    seed: int
    iterations: int
    burn_in: int

    def mc_error(self) -> np.ndarray:
        return self.sd / np.sqrt(self.ess)

    def to_dict(self):
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def _loglik_kernel(lik):
    """Log-likelihood up to a constant, as a fast closure over ``eta``."""
    y = lik.y
    if lik.family is Family.POISSON_LOG:
        return lambda eta: float(y @ eta - np.exp(eta).sum())
    if lik.family is Family.BINOMIAL_LOGIT:
        n = lik.trials
        return lambda eta: float(y @ eta - n @ np.logaddexp(0.0, eta))
    tau = lik.precision

    def gaussian(eta):
        r = y - eta
        return -0.5 * tau * float(r @ r)
    return gaussian


def sample_posterior(problem, iters=200_000, burn_in=20_000, seed=0, ga: GaussianApprox = None,
                     independence_prob=0.5, track_predictors=True, thin=0, dump_path=None,
                     target_acceptance=0.25, adapt_every=100) -> ChainSummary:
    """Run one chain and summarise the post burn-in draws.

    ``iters`` counts all iterations including ``burn_in``. Results depend
    only on the inputs and ``seed``. With ``thin > 0`` every ``thin``-th
    kept state is written to ``dump_path`` as CSV.
    """
    if not iters > burn_in >= 0:
        raise ValueError("need iters > burn_in >= 0")
    if not 0.0 <= independence_prob <= 1.0:
        raise ValueError("independence_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    if ga is None:
        ga = fit_laplace(problem)
    a = problem.design.tocsr()
    qpi = problem.prior.tocsc()
    q = ga.precision.tocsc()
    handle = ga.factor
    loglik = _loglik_kernel(problem.likelihood)
    d = problem.m_star
    mu, mu_eta = ga.mean.copy(), ga.mean_eta.copy()
    qpi_mu = qpi @ mu
    mu_qpi_mu = float(mu @ qpi_mu)

    x = mu.copy()
    eta = mu_eta.copy()
    qpi_x = qpi_mu.copy()
    lp = loglik(eta) - 0.5 * mu_qpi_mu
    q_dev = np.zeros(d)  # Q (x - mu)
    quad = 0.0           # (x - mu)' Q (x - mu)

    scale = 2.38 / np.sqrt(d)
    scale_trace = [scale]
    kept = iters - burn_in
    n_batches = max(2, int(np.sqrt(kept)))
    batch_len = kept // n_batches
    n_batches = kept // batch_len
    sum_x = np.zeros(d)
    sum_x2 = np.zeros(d)
    batch_sums = np.zeros((n_batches, d))
    sum_e = np.zeros(a.shape[0]) if track_predictors else None
    sum_e2 = np.zeros(a.shape[0]) if track_predictors else None

    accepted = rw_acc = rw_tried = ind_acc = ind_tried = 0
    window_acc = window_tried = 0
    n_adapt = 0
    run = 0          # post burn-in iterations spent in the current state
    batch_fill = 0
    batch = 0
    dump_rows = []

    def flush():
        nonlocal run, sum_x, sum_x2, sum_e, sum_e2
        if run == 0:
            return
        dx = x - mu
        sum_x += run * dx
        sum_x2 += run * dx * dx
        if batch < n_batches:
            batch_sums[batch] += run * dx
        if track_predictors:
            de = eta - mu_eta
            sum_e += run * de
            sum_e2 += run * de * de
        run = 0

    it = 0
    while it < iters:
        size = min(_CHUNK, iters - it)
        z = rng.standard_normal((d, size))
        w = handle.solve_lt(z)
        if w.ndim == 1:
            w = w[:, None]
        aw = np.ascontiguousarray((a @ w).T)
        qpi_w = qpi @ w
        q_w = q @ w
        wt = np.ascontiguousarray(w.T)
        qpi_wt = np.ascontiguousarray(qpi_w.T)
        q_wt = np.ascontiguousarray(q_w.T)
        w_qpi_w = np.einsum("ij,ij->j", w, qpi_w)
        w_q_w = np.einsum("ij,ij->j", z, z)
        w_qpi_mu = w.T @ qpi_mu
        independent = rng.random(size) < independence_prob
        log_u = np.log(rng.random(size))

        for k in range(size):
            if independent[k]:
                ind_tried += 1
                eta_p = mu_eta + aw[k]
                prior_p = -0.5 * (mu_qpi_mu + 2.0 * w_qpi_mu[k] + w_qpi_w[k])
                lp_p = loglik(eta_p) + prior_p
                log_alpha = lp_p - lp + 0.5 * (w_q_w[k] - quad)
                if log_u[k] < log_alpha:
                    flush()
                    ind_acc += 1
                    accepted += 1
                    x = mu + wt[k]
                    eta = eta_p
                    qpi_x = qpi_mu + qpi_wt[k]
                    q_dev = q_wt[k].copy()
                    quad = w_q_w[k]
                    lp = lp_p
            else:
                rw_tried += 1
                window_tried += 1
                s = scale
                eta_p = eta + s * aw[k]
                prior_p = -0.5 * (float(x @ qpi_x) + 2.0 * s * float(wt[k] @ qpi_x)
                                  + s * s * w_qpi_w[k])
                lp_p = loglik(eta_p) + prior_p
                if log_u[k] < lp_p - lp:
                    flush()
                    rw_acc += 1
                    window_acc += 1
                    accepted += 1
                    quad = quad + 2.0 * s * float(wt[k] @ q_dev) + s * s * w_q_w[k]
                    x = x + s * wt[k]
                    eta = eta_p
                    qpi_x = qpi_x + s * qpi_wt[k]
                    q_dev = q_dev + s * q_wt[k]
                    lp = lp_p

            if it < burn_in:
                if window_tried >= adapt_every:
                    n_adapt += 1
                    rate = window_acc / window_tried
                    scale *= np.exp((rate - target_acceptance) / np.sqrt(n_adapt))
                    scale_trace.append(scale)
                    window_acc = window_tried = 0
                if it == burn_in - 1:
                    accepted = rw_acc = rw_tried = ind_acc = ind_tried = 0
            else:
                run += 1
                batch_fill += 1
                if thin and (it - burn_in) % thin == 0:
                    dump_rows.append(x.copy())
                if batch_fill == batch_len:
                    flush()
                    batch += 1
                    batch_fill = 0
            it += 1
    flush()

    if accepted == 0:
        raise SamplerError("no proposal accepted after burn-in", scale_trace=scale_trace)

    mean_dev = sum_x / kept
    var = np.maximum(sum_x2 / kept - mean_dev ** 2, 0.0)
    used = n_batches * batch_len
    batch_means = batch_sums / batch_len
    var_bm = batch_len * np.var(batch_means, axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(var_bm > 0, used * var / var_bm, float(used))
    ess = np.clip(ess, 1e-12, None)
    mean_eta = sd_eta = None
    if track_predictors:
        me = sum_e / kept
        mean_eta = mu_eta + me
        sd_eta = np.sqrt(np.maximum(sum_e2 / kept - me ** 2, 0.0))

    if thin and dump_path is not None:
        labels = problem.layout.effect_labels()
        with open(dump_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(labels)
            writer.writerows(np.asarray(dump_rows).tolist())

    return ChainSummary(mean=mu + mean_dev, sd=np.sqrt(var), ess=ess, mean_eta=mean_eta,
                        sd_eta=sd_eta, acceptance_rate=accepted / kept,
                        rw_acceptance_rate=rw_acc / rw_tried if rw_tried else float("nan"),
                        independence_acceptance_rate=ind_acc / ind_tried if ind_tried else float("nan"),
                        scale=float(scale), seed=seed, iterations=iters, burn_in=burn_in)
