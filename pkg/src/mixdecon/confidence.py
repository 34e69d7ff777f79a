"""Confidence intervals for linear functionals of the mixing density.

The interval endpoints are the extreme values of ``h'g`` over densities g
on the grid that stay inside the chi-square acceptance ellipsoid
``n (f* - P*g)' W (f* - P*g) <= chi2(Q-1, 1-alpha)`` intersected with the
simplex and any calibration equalities.  Convexity makes the feasible
functional levels an interval, so each endpoint is found by bisection on
the level with a feasibility QP per probe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincinv

from .core import (
    CovarianceEstimate,
    EmpiricalFrequencies,
    Functional,
    InfeasibleEllipsoidError,
    InfeasibleError,
    InvalidSpecError,
    KernelMatrix,
)
from .deconvolve import assemble_problem
from .qp import min_quadratic_given_level, single_thread_blas, solve_qp

_RELATIVE_WIDTH = 1e-7
_MAX_BISECTIONS = 60


def chi2_quantile(df: int, prob: float) -> float:
    """Quantile of the chi-square distribution with ``df`` degrees of freedom,
    by inverting the regularized lower incomplete gamma function."""
    if df < 1 or int(df) != df:
        raise InvalidSpecError("degrees of freedom must be a positive integer")
    if not 0.0 < prob < 1.0:
        raise InvalidSpecError("probability must lie strictly between 0 and 1")
    return float(2.0 * gammaincinv(df / 2.0, prob))


@dataclass(frozen=True)
class FunctionalInterval:
    """Confidence bounds for a linear functional of the mixing density."""

    lower: float
    upper: float
    alpha: float
    threshold: float
    df: int
    npmle_value: float
    functional_name: str = ""

    def __post_init__(self):
        if self.lower > self.upper:
            raise InvalidSpecError("interval endpoints are inverted")

    def to_dict(self) -> dict:
        return {
            "functional_name": self.functional_name,
            "alpha": self.alpha,
            "T_L": self.lower,
            "T_U": self.upper,
            "npmle_value": self.npmle_value,
            "threshold": self.threshold,
            "df": self.df,
        }


def functional_ci(h: Functional, freq: EmpiricalFrequencies, kernel: KernelMatrix,
                  cov: CovarianceEstimate, alpha: float = 0.05, calibrations=(),
                  tol: float = 1e-8, max_iter: int = 200) -> FunctionalInterval:
    """Confidence interval for ``E h`` under the mixing density.

    A functional level t is kept when the minimum of the weighted misfit
    over {simplex, calibrations, h'g = t}, scaled by the sample size, stays
    below the chi-square critical value with Q-1 degrees of freedom.  The
    bisection bracket is [min h, max h]; it stops once the bracket width
    falls below 1e-7 of the functional's range (or after 60 halvings), and
    the certified-feasible side of each bracket is returned.

    Raises :class:`InfeasibleEllipsoidError` when even the best-fitting
    density violates the acceptance region, which indicates gross misfit.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidSpecError("alpha must lie strictly between 0 and 1")
    if h.h.size != kernel.grid.size:
        raise InvalidSpecError("functional length does not match the grid")
    df = freq.space.size - 1
    threshold = chi2_quantile(df, 1.0 - alpha)
    problem, const = assemble_problem(freq, kernel, cov, calibrations)
    n = freq.n
    with single_thread_blas():
        return _bisect_interval(problem, const, h, n, alpha, threshold, df,
                                tol=tol, max_iter=max_iter)


def _bisect_interval(problem, const, h, n, alpha, threshold, df, tol, max_iter):

    def misfit(sol) -> float:
        return sol.objective + const

    fit = solve_qp(problem, tol=tol, max_iter=max_iter)
    base = n * misfit(fit)
    slack = 1e-9 * max(1.0, threshold)
    if not np.isinf(threshold) and base > threshold + slack:
        raise InfeasibleEllipsoidError(
            f"best achievable misfit {base!r} exceeds the critical value {threshold!r}"
        )
    value = float(h.h @ fit.x)

    def feasible(level: float) -> bool:
        try:
            sol = min_quadratic_given_level(problem, h.h, level, tol=tol, max_iter=max_iter)
        except InfeasibleError:
            return False
        return n * misfit(sol) <= threshold + slack

    lo_h, hi_h = float(h.h.min()), float(h.h.max())
    if hi_h - lo_h <= 1e-12 * max(1.0, abs(lo_h), abs(hi_h)):
        return FunctionalInterval(lower=value, upper=value, alpha=alpha,
                                  threshold=threshold, df=df, npmle_value=value,
                                  functional_name=h.name)
    width_tol = _RELATIVE_WIDTH * (hi_h - lo_h)

    def sweep(feasible_pt: float, boundary: float) -> float:
        """Push from a feasible level toward the bracket end; returns the
        certified-feasible endpoint."""
        if feasible(boundary):
            return boundary
        good, bad = feasible_pt, boundary
        for _ in range(_MAX_BISECTIONS):
            if abs(bad - good) <= width_tol:
                break
            mid = 0.5 * (good + bad)
            if feasible(mid):
                good = mid
            else:
                bad = mid
        return good

    upper = sweep(value, hi_h)
    lower = sweep(value, lo_h)
    return FunctionalInterval(lower=lower, upper=upper, alpha=alpha,
                              threshold=threshold, df=df, npmle_value=value,
                              functional_name=h.name)
