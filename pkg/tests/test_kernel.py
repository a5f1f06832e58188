import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cipgp import KernelSpec, TraceDomainError, build_covariance, identity_covariance, rbf_kernel
from oracles import random_unit_vectors, rbf_matrix


def test_rbf_zero_lag():
    assert rbf_kernel(3.0, 3.0, KernelSpec(1.0, 1.0)) == 1.0


def test_rbf_unit_lag_matches_neighbor_correlation():
    # neighboring points at l = 1 are correlated at about 0.6
    v = rbf_kernel(0.0, 1.0, KernelSpec(1.0, 1.0))
    assert v == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert round(v, 1) == 0.6


def test_rbf_lag_two():
    assert rbf_kernel(0.0, 2.0, KernelSpec(1.0, 1.0)) == pytest.approx(0.1353352832366127, rel=1e-14)


def test_build_two_points():
    m = build_covariance([0, 1], KernelSpec(1.0, 1.0)).matrix
    rho = math.exp(-0.5)
    np.testing.assert_allclose(m, [[1, rho], [rho, 1]], rtol=1e-15)


def test_build_three_points():
    m = build_covariance([0, 1, 2], KernelSpec(1.0, 1.0)).matrix
    np.testing.assert_allclose(np.diag(m), 1.0)
    assert m[0, 1] == pytest.approx(math.exp(-0.5))
    assert m[1, 2] == pytest.approx(math.exp(-0.5))
    assert m[0, 2] == pytest.approx(math.exp(-2.0))


def test_tiny_length_scale_is_identity():
    t = [0.0, 0.5, 1.0, 4.0]
    m = build_covariance(t, KernelSpec(1.0, 1e-6)).matrix
    np.testing.assert_allclose(m, identity_covariance(4, 1.0).matrix, atol=1e-12, rtol=0)


def test_identity_covariance():
    np.testing.assert_array_equal(identity_covariance(2, 1.0).matrix, np.eye(2))
    np.testing.assert_array_equal(identity_covariance(3, 2.0).matrix, np.diag([2.0, 2.0, 2.0]))
    with pytest.raises(ValueError):
        identity_covariance(1)


def test_duplicate_timestamps_rejected():
    with pytest.raises(TraceDomainError):
        build_covariance([0, 1, 1], KernelSpec())


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(sigma_x2=0.0)
    with pytest.raises(ValueError):
        KernelSpec(length_scale=-1.0)
    with pytest.raises(ValueError):
        KernelSpec(length_scale=2.0, l_max=1.0)
    assert KernelSpec(length_scale=2.0).l_max == 2.0


def test_custom_family_matches_builtin():
    def matern12(a, b):
        return 2.0 * math.exp(-abs(a - b) / 1.5)

    t = [0.0, 0.3, 1.1, 2.0]
    cov = build_covariance(t, KernelSpec(sigma_x2=2.0, length_scale=1.5, family="custom", function=matern12))
    ref = np.array([[matern12(a, b) for b in t] for a in t])
    np.testing.assert_allclose(cov.matrix, ref, rtol=1e-15)
    assert np.array_equal(cov.matrix, cov.matrix.T)


def test_matches_loop_oracle():
    t = np.array([0.0, 0.4, 1.3, 2.2, 5.0])
    np.testing.assert_allclose(build_covariance(t, KernelSpec(1.7, 0.8)).matrix, rbf_matrix(t, 0.8, 1.7), rtol=1e-14)


timestamps = st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=15, unique=True).map(sorted)


@settings(max_examples=80, deadline=None)
@given(timestamps, st.floats(min_value=0.05, max_value=20), st.floats(min_value=0.1, max_value=10))
def test_structure_properties(t, l, s2):
    if np.any(np.diff(t) <= 0):
        return
    cov = build_covariance(t, KernelSpec(s2, l))
    m = cov.matrix
    assert np.array_equal(m, m.T)
    assert np.all(np.diag(m) == s2)
    # nondecreasing in l at fixed lag
    m2 = build_covariance(t, KernelSpec(s2, 1.5 * l)).matrix
    assert np.all(m2 >= m)


@settings(max_examples=30, deadline=None)
@given(timestamps, st.floats(min_value=0.05, max_value=5))
def test_psd_on_random_directions(t, l):
    if np.any(np.diff(t) <= 0):
        return
    m = build_covariance(t, KernelSpec(1.0, l)).matrix
    v = random_unit_vectors(np.random.default_rng(0), 1000, len(t))
    quad = np.einsum("ij,jk,ik->i", v, m, v)
    assert quad.min() >= -1e-8


def test_entries_nonincreasing_in_lag():
    k = KernelSpec(1.0, 1.3)
    lags = np.linspace(0, 6, 50)
    vals = [rbf_kernel(0.0, g, k) for g in lags]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
