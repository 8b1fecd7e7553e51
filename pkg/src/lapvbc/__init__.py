"""Laplace approximation and low-rank variational mean correction for latent
Gaussian models at fixed hyperparameters."""
from .config import RunConfig, load_config, parse_config
from .exceptions import (ConfigError, ConvergenceError, DivergenceError, ModelError,
                         NotPositiveDefiniteError, NumericalError, SamplerError,
                         SingularHessianError)
from .gmrf import SparseSymmetric, factorize, marginal_variances, takahashi
from .laplace import GaussianApprox, fit_laplace, mle_fit
from .likelihood import Family, Likelihood, taylor_coefficients
from .model import EffectKind, EffectSpec, LikelihoodSpec, ModelSpec, ObservationData
from .oracle import ChainSummary, sample_posterior
from .problem import LatentProblem, assemble, augment
from .quad import curvature_coefficients, expected_negloglik, ghq_rule
from .vbc import (CorrectionResult, CorrectionSet, kld_gaussian, vbc_correct,
                  vbc_correct_exact_poisson, vbc_correct_full_rank, vbc_from_mle)

__all__ = [name for name in dir() if not name.startswith("_")]
