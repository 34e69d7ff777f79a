"""Tabulation of observed outcomes and the ridged multinomial covariance."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import (
    CovarianceEstimate,
    EmpiricalFrequencies,
    EmptySampleError,
    OutcomeSpace,
    SingularCovarianceError,
)

#: Diagonal ridge added before inverting the multinomial covariance.
DEFAULT_RIDGE = 0.001


def tabulate(observations, space: OutcomeSpace) -> EmpiricalFrequencies:
    """Count observed outcome labels against an outcome space.

    Every observation must be one of the space's labels; unknown labels
    raise a :class:`TabulationError` naming the offender.
    """
    counts = np.zeros(space.size, dtype=np.int64)
    n = 0
    for obs in observations:
        counts[space.index_of(obs)] += 1
        n += 1
    if n == 0:
        raise EmptySampleError("cannot tabulate an empty observation list")
    return EmpiricalFrequencies(counts=counts, space=space)


def frequencies_from_counts(counts, space: OutcomeSpace) -> EmpiricalFrequencies:
    """Build frequencies from pre-tabulated per-outcome counts."""
    return EmpiricalFrequencies(counts=np.asarray(counts), space=space)


def multinomial_covariance(freq: EmpiricalFrequencies,
                           ridge: float = DEFAULT_RIDGE) -> CovarianceEstimate:
    """Per-draw covariance diag(f*) - f* f*' of the reduced proportions.

    The inverse is taken of the ridged matrix via a Cholesky factorisation;
    the default ridge of 0.001 guarantees positive definiteness even when
    some outcomes were never observed.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    f_star = freq.fhat_star
    matrix = np.diag(f_star) - np.outer(f_star, f_star)
    ridged = matrix + ridge * np.eye(f_star.size)
    try:
        factor = cho_factor(ridged, lower=True)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError(
            "ridged multinomial covariance is not positive definite; "
            "the sample is degenerate or the ridge is too small"
        ) from None
    inverse = cho_solve(factor, np.eye(f_star.size))
    inverse = 0.5 * (inverse + inverse.T)
    return CovarianceEstimate(matrix=matrix, ridge=float(ridge), inverse=inverse)
