import numpy as np
import pytest
from conftest import simplex_lattice

from mixdecon.confidence import FunctionalInterval, chi2_quantile, functional_ci
from mixdecon.core import (
    CalibrationConstraint,
    Functional,
    InfeasibleEllipsoidError,
    InvalidSpecError,
    KernelMatrix,
    OutcomeSpace,
    SupportGrid,
)
from mixdecon.deconvolve import functional_value, npmle
from mixdecon.empirics import frequencies_from_counts, multinomial_covariance
from mixdecon.kernels import GeometricTruncatedSpec, geometric_truncated_kernel


def test_chi2_quantile_table_values():
    assert chi2_quantile(1, 0.95) == pytest.approx(3.841459, abs=1e-5)
    assert chi2_quantile(3, 0.95) == pytest.approx(7.814728, abs=1e-5)
    # chi-square with two degrees of freedom is Exponential(mean 2)
    assert chi2_quantile(2, 1.0 - np.exp(-1.0)) == pytest.approx(2.0, abs=1e-12)


def test_chi2_quantile_rejects_bad_prob():
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(InvalidSpecError):
            chi2_quantile(2, bad)
    with pytest.raises(InvalidSpecError):
        chi2_quantile(0, 0.5)


def _instance(seed=5, K=3, Q=4, n=400):
    rng = np.random.default_rng(seed)
    cols = rng.dirichlet(np.ones(Q), size=K).T
    space = OutcomeSpace(tuple(range(Q)))
    grid = SupportGrid.marginal(np.linspace(0.1, 0.9, K))
    kernel = KernelMatrix(matrix=cols, outcomes=space, grid=grid)
    g_true = rng.dirichlet(np.ones(K))
    draws = rng.choice(Q, size=n, p=kernel.matrix @ g_true)
    freq = frequencies_from_counts(np.bincount(draws, minlength=Q), space)
    cov = multinomial_covariance(freq)
    return kernel, freq, cov, g_true


def test_constant_functional_degenerate_interval():
    kernel, freq, cov, _ = _instance()
    h = Functional(h=np.full(3, 0.7), name="constant")
    interval = functional_ci(h, freq, kernel, cov)
    assert interval.lower == pytest.approx(0.7, abs=1e-12)
    assert interval.upper == pytest.approx(0.7, abs=1e-12)


def test_huge_threshold_gives_whole_simplex_range():
    # a loose fit plus a tiny alpha emulates an unbounded critical value
    kernel, freq, _, _ = _instance(n=50)
    cov = multinomial_covariance(freq, ridge=1.0)  # large ridge flattens the misfit
    h = Functional(h=np.array([0.2, 0.5, 0.9]))
    interval = functional_ci(h, freq, kernel, cov, alpha=1e-12)
    assert interval.lower == pytest.approx(0.2, abs=1e-9)
    assert interval.upper == pytest.approx(0.9, abs=1e-9)


def test_endpoints_match_lattice_oracle():
    for seed in (5, 6, 7):
        kernel, freq, cov, _ = _instance(seed=seed)
        h = Functional(h=np.array([0.1, 0.4, 1.0]))
        interval = functional_ci(h, freq, kernel, cov, alpha=0.05)
        points = simplex_lattice(3, 200)  # 0.005 spacing
        resid = freq.fhat_star[None, :] - points @ kernel.reduced.T
        misfit = freq.n * np.einsum("ij,jk,ik->i", resid, cov.inverse, resid)
        inside = points[misfit <= interval.threshold]
        assert inside.size, "ellipsoid should contain lattice points"
        values = inside @ h.h
        assert interval.upper == pytest.approx(values.max(), abs=0.005)
        assert interval.lower == pytest.approx(values.min(), abs=0.005)


def test_npmle_value_always_inside():
    for seed in range(8):
        kernel, freq, cov, _ = _instance(seed=seed)
        h = Functional(h=np.array([0.0, 0.3, 1.0]))
        est = npmle(freq, kernel, cov)
        interval = functional_ci(h, freq, kernel, cov)
        value = functional_value(est, h)
        assert interval.lower - 1e-7 <= value <= interval.upper + 1e-7
        assert interval.lower <= interval.upper


def test_monotone_in_alpha_and_nesting():
    rng = np.random.default_rng(99)
    for _ in range(12):
        kernel, freq, cov, _ = _instance(seed=int(rng.integers(0, 10_000)))
        h = Functional(h=np.array([0.1, 0.5, 0.9]))
        wide = functional_ci(h, freq, kernel, cov, alpha=0.05)
        narrow = functional_ci(h, freq, kernel, cov, alpha=0.20)
        assert wide.lower <= narrow.lower + 1e-7
        assert narrow.upper <= wide.upper + 1e-7
        # pinning a share to its fitted value can only shrink the interval
        est = npmle(freq, kernel, cov)
        calib = CalibrationConstraint(coefficients=np.eye(3)[0], target=float(est.g[0]))
        nested = functional_ci(h, freq, kernel, cov, alpha=0.05, calibrations=(calib,))
        assert nested.lower >= wide.lower - 1e-7
        assert nested.upper <= wide.upper + 1e-7


def test_joint_grid_share_interval_brackets_truth():
    # confidence interval for a subgroup share on a covariate-by-support grid
    from mixdecon.kernels import GeometricCensoredSpec, geometric_censored_kernel, joint_kernel

    base = geometric_censored_kernel(
        GeometricCensoredSpec(p_attempt=(0.3, 0.7, 1.0), max_attempts=3))
    kernel = joint_kernel(base, [0, 1], censored=True)
    rng = np.random.default_rng(42)
    g_true = np.array([0.20, 0.15, 0.10, 0.05, 0.20, 0.30])
    draws = rng.choice(kernel.outcomes.size, size=6000, p=kernel.matrix @ g_true)
    freq = frequencies_from_counts(
        np.bincount(draws, minlength=kernel.outcomes.size), kernel.outcomes)
    cov = multinomial_covariance(freq)
    share = Functional.from_rule(kernel.grid, lambda x, s: float(x == 0), name="level-0 share")
    interval = functional_ci(share, freq, kernel, cov, alpha=0.05)
    truth = 0.45
    assert interval.lower <= truth <= interval.upper
    assert interval.df == kernel.outcomes.size - 1
    est = npmle(freq, kernel, cov)
    assert interval.lower - 1e-7 <= functional_value(est, share) <= interval.upper + 1e-7


def test_gross_misfit_raises():
    kernel = geometric_truncated_kernel(
        GeometricTruncatedSpec(p_attempt=(0.95, 1.0), max_attempts=4))
    # nearly all mass on late attempts is impossible under this grid
    freq = frequencies_from_counts([1, 1, 1, 5000], kernel.outcomes)
    cov = multinomial_covariance(freq)
    with pytest.raises(InfeasibleEllipsoidError):
        functional_ci(Functional(h=np.array([0.0, 1.0])), freq, kernel, cov)


def test_interval_validates_order():
    with pytest.raises(InvalidSpecError):
        FunctionalInterval(lower=1.0, upper=0.0, alpha=0.05, threshold=1.0, df=1,
                           npmle_value=0.5)


def test_report_keys():
    kernel, freq, cov, _ = _instance()
    h = Functional(h=np.array([0.1, 0.4, 1.0]), name="demo")
    interval = functional_ci(h, freq, kernel, cov)
    payload = interval.to_dict()
    assert set(payload) == {"functional_name", "alpha", "T_L", "T_U",
                            "npmle_value", "threshold", "df"}
    assert payload["df"] == 3
