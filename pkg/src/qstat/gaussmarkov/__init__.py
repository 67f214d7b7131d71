"""Hidden Gauss-Markov models: filtering, smoothing, sampling, discretization."""

from .continuous import (ContinuousFilterOutput, discretize, hgmm_sample, kalman_bucy,
                         mfp_smooth, van_loan)
from .discrete import (FilterOutput, gaussian_loglik_oracle, gaussian_smoother_oracle,
                       kalman_filter, rts_smooth, sample_discrete)
from .model import CtGaussMarkovModel, GaussMarkovModel
from .records import GaussianRecord

__all__ = [
    "ContinuousFilterOutput", "CtGaussMarkovModel", "FilterOutput", "GaussMarkovModel",
    "GaussianRecord", "discretize", "gaussian_loglik_oracle", "gaussian_smoother_oracle",
    "hgmm_sample", "kalman_bucy", "kalman_filter", "mfp_smooth", "rts_smooth",
    "sample_discrete", "van_loan",
]
