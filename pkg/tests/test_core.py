import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixdecon.core import (
    NR,
    CalibrationConstraint,
    CovarianceEstimate,
    EmpiricalFrequencies,
    EmptySampleError,
    Functional,
    InvalidSpecError,
    KernelMatrix,
    MixingEstimate,
    OutcomeSpace,
    SupportGrid,
    SurveyRecord,
    TabulationError,
    flatten_joint_index,
    unflatten_joint_index,
)


def test_flatten_examples():
    assert flatten_joint_index(1, 1, K=10) == 1
    assert flatten_joint_index(2, 1, K=10) == 11
    assert flatten_joint_index(3, 7, K=10) == (3 - 1) * 10 + 7 == 27


def test_flatten_out_of_range():
    with pytest.raises(IndexError):
        flatten_joint_index(1, 0, K=10)
    with pytest.raises(IndexError):
        flatten_joint_index(1, 11, K=10)
    with pytest.raises(IndexError):
        flatten_joint_index(0, 1, K=10)
    with pytest.raises(IndexError):
        flatten_joint_index(3, 1, K=10, L=2)
    with pytest.raises(IndexError):
        unflatten_joint_index(0, K=10)


def test_flatten_round_trip_exhaustive():
    for L in range(1, 21):
        for K in range(1, 21):
            for flat in range(1, L * K + 1):
                l, k = unflatten_joint_index(flat, K)
                assert 1 <= l <= L and 1 <= k <= K
                assert flatten_joint_index(l, k, K, L=L) == flat


def test_support_grid_marginal():
    grid = SupportGrid.marginal([0.1, 0.2, 0.3])
    assert grid.size == 3 and not grid.is_joint
    assert np.allclose(grid.theta, [0.1, 0.2, 0.3])
    with pytest.raises(InvalidSpecError):
        SupportGrid.marginal([0.1, 0.1])
    with pytest.raises(InvalidSpecError):
        SupportGrid.marginal([0.1, np.inf])
    with pytest.raises(InvalidSpecError):
        SupportGrid.marginal([])


def test_support_grid_joint_layout():
    grid = SupportGrid.joint([0, 1], [0.5, 0.9])
    assert grid.is_joint and grid.size == 4
    assert grid.values == ((0, 0.5), (0, 0.9), (1, 0.5), (1, 0.9))
    # row-major: level varies slowest, matching the 1-based flat index
    for flat_1 in range(1, 5):
        l, k = unflatten_joint_index(flat_1, K=2)
        assert grid.values[flat_1 - 1] == (grid.x_levels[l - 1], grid.base_support[k - 1])
    assert grid.level_position(1) == 1
    assert grid.level_mask(0).tolist() == [True, True, False, False]


def test_outcome_space():
    space = OutcomeSpace((1, 2, 3, NR))
    assert space.size == 4 and space.dropped_index == 3
    assert space.index_of(NR) == 3
    with pytest.raises(TabulationError):
        space.index_of("missing")
    with pytest.raises(InvalidSpecError):
        OutcomeSpace((1,))
    with pytest.raises(InvalidSpecError):
        OutcomeSpace((1, 1))


def test_kernel_matrix_validation():
    space = OutcomeSpace(("a", "b"))
    grid = SupportGrid.marginal([0.3, 0.7])
    KernelMatrix(matrix=np.array([[0.4, 1.0], [0.6, 0.0]]), outcomes=space, grid=grid)
    with pytest.raises(InvalidSpecError):
        KernelMatrix(matrix=np.array([[0.4, 0.9], [0.59, 0.0]]), outcomes=space, grid=grid)
    with pytest.raises(InvalidSpecError):
        KernelMatrix(matrix=np.array([[1.4, 1.0], [-0.4, 0.0]]), outcomes=space, grid=grid)
    incomplete = KernelMatrix(matrix=np.array([[0.4, 0.9], [0.1, 0.05]]),
                              outcomes=space, grid=grid, complete=False)
    assert incomplete.reduced.shape == (1, 2)


def test_frequencies():
    space = OutcomeSpace(("a", "b", "c"))
    freq = EmpiricalFrequencies(counts=np.array([2, 3, 5]), space=space)
    assert freq.n == 10
    assert np.allclose(freq.fhat, [0.2, 0.3, 0.5])
    assert np.allclose(freq.fhat_star, [0.2, 0.3])
    with pytest.raises(InvalidSpecError):
        EmpiricalFrequencies(counts=np.array([2, -1, 5]), space=space)
    with pytest.raises(EmptySampleError):
        EmpiricalFrequencies(counts=np.array([0, 0, 0]), space=space)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=60), min_size=2, max_size=7))
def test_covariance_estimate_cholesky_property(counts):
    # every all-positive count vector yields an invertible ridged covariance
    from mixdecon.empirics import multinomial_covariance

    space = OutcomeSpace(tuple(range(len(counts))))
    freq = EmpiricalFrequencies(counts=np.array(counts), space=space)
    cov = multinomial_covariance(freq)
    np.linalg.cholesky(cov.inverse)  # must not raise
    d = cov.dim
    assert np.abs(cov.inverse @ (cov.matrix + cov.ridge * np.eye(d)) - np.eye(d)).max() <= 1e-8


def test_covariance_estimate_rejects_mismatched_inverse():
    with pytest.raises(InvalidSpecError):
        CovarianceEstimate(matrix=np.array([[0.25]]), ridge=0.0, inverse=np.array([[5.0]]))


def test_mixing_estimate_clamps_and_checks():
    grid = SupportGrid.marginal([0.2, 0.8])
    est = MixingEstimate(g=np.array([1.0 + 5e-11, -5e-11]), grid=grid, objective=0.0,
                         kkt_residual=0.0, status="converged")
    assert est.g.min() >= 0.0 and est.g.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(InvalidSpecError):
        MixingEstimate(g=np.array([1.0 + 1e-6, -1e-6]), grid=grid, objective=0.0,
                       kkt_residual=0.0, status="converged")
    with pytest.raises(InvalidSpecError):
        MixingEstimate(g=np.array([0.7, 0.2]), grid=grid, objective=0.0,
                       kkt_residual=0.0, status="converged")
    calib = CalibrationConstraint(coefficients=np.array([1.0, 0.0]), target=0.9)
    with pytest.raises(InvalidSpecError):
        MixingEstimate(g=np.array([0.5, 0.5]), grid=grid, objective=0.0,
                       kkt_residual=0.0, status="converged", calibrations=(calib,))


def test_functional_and_calibration_rules():
    grid = SupportGrid.joint([0, 1], [0.5, 0.9])
    h = Functional.from_rule(grid, lambda x, s: x * s)
    assert np.allclose(h.h, [0.0, 0.0, 0.5, 0.9])
    c = CalibrationConstraint.from_rule(grid, lambda x, s: 1.0 if x == 0 else 0.0, target=0.5)
    assert np.allclose(c.coefficients, [1.0, 1.0, 0.0, 0.0])
    with pytest.raises(InvalidSpecError):
        Functional(h=np.array([np.nan]))


def test_survey_record_validation():
    SurveyRecord(x=1, y=3, responded=True)
    SurveyRecord(x=None, y=NR, responded=False)
    with pytest.raises(InvalidSpecError):
        SurveyRecord(x=1, y=3, responded=False)
    with pytest.raises(InvalidSpecError):
        SurveyRecord(x=1, y=NR, responded=True)


def test_types_are_immutable():
    grid = SupportGrid.marginal([0.2, 0.8])
    with pytest.raises(Exception):
        grid.values = (0.1,)
    est = MixingEstimate(g=np.array([0.5, 0.5]), grid=grid, objective=0.0,
                         kkt_residual=0.0, status="converged")
    with pytest.raises(ValueError):
        est.g[0] = 0.9
