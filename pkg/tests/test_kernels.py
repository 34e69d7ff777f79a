import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from mixdecon.core import NR, InvalidSpecError
from mixdecon.kernels import (
    GeometricCensoredSpec,
    GeometricTruncatedSpec,
    NormalDiscretizedSpec,
    ShiftedBinomialSpec,
    geometric_censored_kernel,
    geometric_truncated_kernel,
    joint_kernel,
    load_kernel_csv,
    normal_discretized_kernel,
    response_probability,
    save_kernel_csv,
    shifted_binomial_kernel,
)


def test_truncated_certain_responder():
    k = geometric_truncated_kernel(GeometricTruncatedSpec(p_attempt=(1.0,), max_attempts=4))
    assert np.allclose(k.matrix[:, 0], [1, 0, 0, 0])


def test_truncated_half():
    k = geometric_truncated_kernel(GeometricTruncatedSpec(p_attempt=(0.5,), max_attempts=2))
    assert np.allclose(k.matrix[:, 0], [2 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=80, deadline=None)
@given(st.floats(min_value=1e-6, max_value=1.0))
def test_truncated_columns_normalized(p):
    k = geometric_truncated_kernel(GeometricTruncatedSpec(p_attempt=(p,), max_attempts=6))
    assert abs(k.matrix[:, 0].sum() - 1.0) <= 1e-12


def test_truncated_rejects_zero_probability():
    with pytest.raises(InvalidSpecError):
        GeometricTruncatedSpec(p_attempt=(0.0, 0.5), max_attempts=4)


def test_censored_values():
    k = geometric_censored_kernel(GeometricCensoredSpec(p_attempt=(0.5,), max_attempts=2))
    assert k.outcomes.outcomes == (1, 2, NR)
    assert np.allclose(k.matrix[:, 0], [0.5, 0.25, 0.25], atol=1e-15)
    sure = geometric_censored_kernel(GeometricCensoredSpec(p_attempt=(1.0,), max_attempts=4))
    assert np.allclose(sure.matrix[:, 0], [1, 0, 0, 0, 0])


def test_censored_nr_is_complement():
    rng = np.random.default_rng(5)
    for _ in range(100):
        p = float(rng.uniform(0.01, 1.0))
        m0 = int(rng.integers(1, 12))
        k = geometric_censored_kernel(GeometricCensoredSpec(p_attempt=(p,), max_attempts=m0))
        assert k.matrix[-1, 0] == pytest.approx(1.0 - k.matrix[:-1, 0].sum(), abs=1e-12)


def test_truncated_is_renormalized_censored():
    rng = np.random.default_rng(6)
    for _ in range(100):
        p = float(rng.uniform(0.01, 1.0))
        m0 = int(rng.integers(2, 10))  # truncated outcome space needs >= 2 attempts
        trunc = geometric_truncated_kernel(
            GeometricTruncatedSpec(p_attempt=(p,), max_attempts=m0)).matrix[:, 0]
        cens = geometric_censored_kernel(
            GeometricCensoredSpec(p_attempt=(p,), max_attempts=m0)).matrix[:, 0]
        renorm = cens[:-1] / (1.0 - cens[-1])
        assert np.abs(trunc - renorm).max() <= 1e-12


def test_censored_nr_decreasing_in_p():
    grid = np.linspace(0.05, 1.0, 25)
    k = geometric_censored_kernel(GeometricCensoredSpec(p_attempt=tuple(grid), max_attempts=5))
    nr = k.matrix[-1]
    assert np.all(np.diff(nr) < 0)


def test_shifted_binomial_values():
    k = shifted_binomial_kernel(ShiftedBinomialSpec(p_response=(1.0,), trials=3))
    assert np.allclose(k.matrix[:, 0], [0, 0, 0, 1])
    k2 = shifted_binomial_kernel(ShiftedBinomialSpec(p_response=(0.5,), trials=3))
    assert np.allclose(k2.matrix[:, 0], [1 / 8, 3 / 8, 3 / 8, 1 / 8])
    k3 = shifted_binomial_kernel(ShiftedBinomialSpec(p_response=(0.2,), trials=3))
    assert abs(k3.matrix[:, 0].sum() - 1.0) <= 1e-12
    assert k2.outcomes.outcomes == (1, 2, 3, 4)


def test_normal_kernel_values():
    k = normal_discretized_kernel(
        NormalDiscretizedSpec(locations=(0.0,), sigma=1.0, bin_edges=(0.0,)))
    assert np.allclose(k.matrix[:, 0], [0.5, 0.5], atol=1e-14)
    k2 = normal_discretized_kernel(
        NormalDiscretizedSpec(locations=(1.0,), sigma=1.0, bin_edges=(0.0, 1.0)))
    phi_m1 = ndtr(-1.0)
    assert np.allclose(k2.matrix[:, 0], [phi_m1, 0.5 - phi_m1, 0.5], atol=1e-12)
    assert abs(k2.matrix[:, 0].sum() - 1.0) <= 1e-12


def test_normal_kernel_rejects_bad_edges():
    with pytest.raises(InvalidSpecError):
        NormalDiscretizedSpec(locations=(0.0,), sigma=1.0, bin_edges=(1.0, 0.0))


def test_joint_degenerate_level_matches_base():
    base = geometric_censored_kernel(GeometricCensoredSpec(p_attempt=(0.3, 0.8), max_attempts=3))
    joint = joint_kernel(base, [7], censored=True)
    assert np.allclose(joint.matrix, base.matrix)
    assert joint.outcomes.outcomes[-1] == NR
    assert joint.grid.values == ((7, 0.3), (7, 0.8))


def test_joint_block_diagonal_truncated():
    base = geometric_truncated_kernel(GeometricTruncatedSpec(p_attempt=(0.4, 0.9), max_attempts=2))
    joint = joint_kernel(base, [0, 1], censored=False)
    assert joint.matrix.shape == (4, 4)
    assert np.allclose(joint.matrix[:2, :2], base.matrix)
    assert np.allclose(joint.matrix[2:, 2:], base.matrix)
    assert np.allclose(joint.matrix[:2, 2:], 0.0)
    assert np.allclose(joint.matrix[2:, :2], 0.0)
    assert joint.outcomes.outcomes == ((0, 1), (0, 2), (1, 1), (1, 2))


def test_joint_censored_shares_nr_row():
    base = geometric_censored_kernel(GeometricCensoredSpec(p_attempt=(0.4, 0.9), max_attempts=2))
    joint = joint_kernel(base, [0, 1], censored=True)
    assert joint.matrix.shape == (5, 4)
    assert np.allclose(joint.matrix.sum(axis=0), 1.0, atol=1e-12)
    assert np.allclose(joint.matrix[-1], np.tile(base.matrix[-1], 2))
    assert joint.outcomes.outcomes[-1] == NR


def test_kernel_csv_round_trip(tmp_path):
    base = geometric_censored_kernel(GeometricCensoredSpec(p_attempt=(0.25, 0.75), max_attempts=3))
    path = tmp_path / "kernel.csv"
    save_kernel_csv(base, path)
    loaded = load_kernel_csv(path)
    assert np.allclose(loaded.matrix, base.matrix)
    assert np.allclose(loaded.grid.theta, base.grid.theta)
    # outcome labels are strings on reload
    assert loaded.outcomes.outcomes == ("1", "2", "3", NR)


def test_kernel_csv_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("outcome,0.5\n1,0.4\n2,0.7\n")  # column sums to 1.1
    with pytest.raises(InvalidSpecError):
        load_kernel_csv(bad)
    bad.write_text("wrong,0.5\n1,1.0\n")
    with pytest.raises(InvalidSpecError):
        load_kernel_csv(bad)


def test_response_probability_stable():
    assert response_probability(1.0, 7) == 1.0
    assert response_probability(0.5, 2) == pytest.approx(0.75, abs=1e-15)
    tiny = response_probability(1e-12, 4)
    assert tiny == pytest.approx(4e-12, rel=1e-9)
    arr = response_probability(np.array([0.1, 1.0]), 3)
    assert arr[1] == 1.0
