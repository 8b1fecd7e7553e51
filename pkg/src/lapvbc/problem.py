"""Assembled latent Gaussian model at fixed hyperparameters."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .exceptions import ModelError
from .gmrf import SparseSymmetric, assemble_prior_precision
from .likelihood import Family, Likelihood
from .model import (BlockSlot, EffectKind, LatentLayout, ModelSpec, ObservationData,
                    build_layout, predictor_map)


@dataclass(frozen=True, eq=False)
class LatentProblem:
    """Everything the solvers need: ``eta = design @ x``, ``x ~ N(0, prior^-1)``
    and the observation likelihood."""

    layout: LatentLayout
    design: sp.csr_matrix
    prior: SparseSymmetric
    likelihood: Likelihood

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def m_star(self) -> int:
        return self.design.shape[1]

    def with_prior(self, prior: SparseSymmetric) -> "LatentProblem":
        return replace(self, prior=prior)

    def log_posterior(self, x) -> float:
        """Unnormalised log density of the effects given the data."""
        x = np.asarray(x, dtype=float)
        return self.likelihood.total(self.design @ x) - 0.5 * float(x @ (self.prior @ x))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.design.T @ self.likelihood.grad(self.design @ x) - self.prior @ x


def make_likelihood(model: ModelSpec, data: ObservationData) -> Likelihood:
    spec = model.likelihood
    trials = None
    if spec.family is Family.BINOMIAL_LOGIT:
        if spec.trials_column is not None:
            trials = data.column(spec.trials_column)
        elif data.trials is not None:
            trials = data.trials
        elif spec.trials is not None:
            trials = np.full(data.n_obs, float(spec.trials))
        else:
            raise ModelError("binomial likelihood needs trial counts")
    return Likelihood(spec.family, data.y, trials=trials, precision=spec.precision)


def assemble(model: ModelSpec, data: ObservationData) -> LatentProblem:
    layout = build_layout(model, data)
    return LatentProblem(layout=layout, design=predictor_map(model, data),
                         prior=assemble_prior_precision(model),
                         likelihood=make_likelihood(model, data))


def augment(problem: LatentProblem, log_precision: float = 14.0) -> LatentProblem:
    """Explicit augmented-field version of ``problem``.

    The linear predictors become the first ``n`` latent variables with
    ``eta = A x + eps``, ``eps ~ N(0, exp(-log_precision) I)``; the likelihood
    then reads them through an identity design.
    """
    kappa = float(np.exp(log_precision))
    a = sp.csr_matrix(problem.design)
    n, m_star = a.shape
    qpi = problem.prior.tocsc()
    top = sp.hstack([kappa * sp.identity(n), -kappa * a])
    bottom = sp.hstack([-kappa * a.T, qpi + kappa * (a.T @ a)])
    prior = SparseSymmetric.from_matrix(sp.vstack([top, bottom]).tocsc(),
                                        rank_deficiency=problem.prior.rank_deficiency, atol=1e-9)
    blocks = [BlockSlot("predictor", EffectKind.IID, 0, n)]
    blocks += [BlockSlot(b.name, b.kind, b.offset + n, b.size) for b in problem.layout.blocks]
    design = sp.hstack([sp.identity(n), sp.csr_matrix((n, m_star))]).tocsr()
    return LatentProblem(layout=LatentLayout(n, tuple(blocks)), design=design,
                         prior=prior, likelihood=problem.likelihood)
