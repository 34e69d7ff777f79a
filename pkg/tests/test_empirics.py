from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixdecon.core import EmptySampleError, OutcomeSpace, TabulationError
from mixdecon.empirics import multinomial_covariance, tabulate


def test_tabulate_counts():
    space = OutcomeSpace(("a", "b"))
    freq = tabulate(["a", "a", "b", "a"], space)
    assert np.allclose(freq.fhat, [0.75, 0.25])
    assert np.allclose(freq.fhat_star, [0.75])


def test_tabulate_all_dropped_outcome():
    space = OutcomeSpace(("a", "b"))
    freq = tabulate(["b", "b"], space)
    assert np.allclose(freq.fhat_star, [0.0])


def test_tabulate_matches_counter_oracle():
    rng = np.random.default_rng(11)
    space = OutcomeSpace(tuple(range(6)))
    draws = rng.choice(6, size=1000, p=[0.3, 0.25, 0.2, 0.1, 0.1, 0.05]).tolist()
    freq = tabulate(draws, space)
    oracle = Counter(draws)
    assert freq.counts.tolist() == [oracle.get(j, 0) for j in range(6)]
    assert freq.n == 1000


def test_tabulate_errors():
    space = OutcomeSpace(("a", "b"))
    with pytest.raises(TabulationError, match="'c'"):
        tabulate(["a", "c"], space)
    with pytest.raises(EmptySampleError):
        tabulate([], space)


def test_covariance_binary_example():
    space = OutcomeSpace(("a", "b"))
    freq = tabulate(["a", "b"] * 10, space)
    cov = multinomial_covariance(freq, ridge=0.0)
    assert cov.matrix[0, 0] == pytest.approx(0.25)
    assert cov.inverse[0, 0] == pytest.approx(4.0)
    ridged = multinomial_covariance(freq, ridge=0.001)
    assert ridged.inverse[0, 0] == pytest.approx(1.0 / 0.251, abs=1e-12)


def test_ridge_rescues_degenerate_sample():
    space = OutcomeSpace(("a", "b", "c"))
    freq = tabulate(["a"] * 5, space)
    cov = multinomial_covariance(freq, ridge=0.001)
    np.linalg.cholesky(cov.inverse)


def test_unridged_degenerate_sample_raises():
    from mixdecon.core import SingularCovarianceError

    space = OutcomeSpace(("a", "b", "c"))
    freq = tabulate(["c"] * 5, space)  # reduced covariance is all zeros
    with pytest.raises(SingularCovarianceError):
        multinomial_covariance(freq, ridge=0.0)


def test_covariance_independent_of_n():
    space = OutcomeSpace(("a", "b", "c"))
    small = tabulate(["a", "a", "b", "c"], space)
    large = tabulate(["a", "a", "b", "c"] * 50, space)
    c1 = multinomial_covariance(small)
    c2 = multinomial_covariance(large)
    assert np.allclose(c1.matrix, c2.matrix, atol=1e-15)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=2, max_size=8))
def test_covariance_psd_for_any_probability_vector(raw):
    f = np.asarray(raw) / np.sum(raw)
    f_star = f[:-1]
    matrix = np.diag(f_star) - np.outer(f_star, f_star)
    eigvals = np.linalg.eigvalsh(matrix)
    assert eigvals.min(initial=0.0) >= -1e-10


def test_inverse_identity_residual():
    space = OutcomeSpace(tuple(range(5)))
    freq = tabulate([0, 1, 1, 2, 3, 3, 3, 4], space)
    cov = multinomial_covariance(freq)
    d = cov.dim
    resid = cov.inverse @ (cov.matrix + cov.ridge * np.eye(d)) - np.eye(d)
    assert np.abs(resid).max() <= 1e-8
