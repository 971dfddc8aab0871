import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtrgp.errors import NumericalError
from dtrgp.kernels import (
    JITTER_MAX,
    JITTER_START,
    KernelSpec,
    build_covariance,
    cholesky_jitter,
    kernel_eval,
    matern_correlation,
    matern_log_derivative,
)

finite = st.floats(-5, 5, allow_nan=False)


def test_zero_distance_returns_signal_variance():
    spec = KernelSpec("matern52", [0.3, 2.0], 2.0)
    assert kernel_eval(spec, [0.1, 0.2], [0.1, 0.2]) == 2.0


def test_matern52_unit_distance():
    expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
    spec = KernelSpec("matern52", [1.0], 1.0)
    assert kernel_eval(spec, [0.0], [1.0]) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.523994, abs=1e-6)


def test_matern32_unit_distance():
    expected = (1 + math.sqrt(3)) * math.exp(-math.sqrt(3))
    spec = KernelSpec("matern32", [1.0], 1.0)
    assert kernel_eval(spec, [0.0], [1.0]) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.48336, abs=1e-5)


def test_dimension_mismatch():
    spec = KernelSpec("matern52", [1.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        kernel_eval(spec, [0.0], [1.0, 2.0])


@pytest.mark.parametrize("bad", [{"length_scales": [0.0]}, {"length_scales": [-1.0]}, {"signal_variance": 0.0}])
def test_invalid_spec(bad):
    kw = {"family": "matern52", "length_scales": [1.0], "signal_variance": 1.0}
    kw.update(bad)
    with pytest.raises(ValueError):
        KernelSpec(**kw)


def test_unknown_family():
    with pytest.raises(ValueError):
        KernelSpec("rbf", [1.0], 1.0)


@settings(max_examples=200, deadline=None)
@given(a=st.lists(finite, min_size=2, max_size=2), b=st.lists(finite, min_size=2, max_size=2),
       fam=st.sampled_from(["matern52", "matern32"]))
def test_symmetric_bounded_stationary(a, b, fam):
    spec = KernelSpec(fam, [0.7, 1.3], 1.7)
    k = kernel_eval(spec, a, b)
    assert k == kernel_eval(spec, b, a)
    assert 0 <= k <= 1.7
    shift = np.array([0.37, -1.1])
    assert kernel_eval(spec, np.add(a, shift), np.add(b, shift)) == pytest.approx(k, rel=1e-10, abs=1e-300)
    # depends only on coordinate-wise absolute differences
    reflected = np.array([a[0], 2 * b[1] - a[1]])
    assert kernel_eval(spec, reflected, b) == pytest.approx(k, rel=1e-12, abs=1e-300)


def test_build_covariance_single_point():
    spec = KernelSpec("matern52", [1.0], 2.5)
    K = build_covariance(spec, np.array([[0.3]]), jitter=1e-8)
    assert K.shape == (1, 1) and K[0, 0] == 2.5 + 1e-8


def test_build_covariance_matches_kernel_eval():
    spec = KernelSpec("matern32", [0.4], 1.2)
    X = np.array([[0.0], [0.5], [1.0]])
    K = build_covariance(spec, X)
    assert np.array_equal(K, K.T)
    for i in range(3):
        for j in range(3):
            if i != j:
                assert K[i, j] == pytest.approx(kernel_eval(spec, X[i], X[j]), rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(finite, min_size=2, max_size=2), min_size=1, max_size=12))
def test_build_covariance_exactly_symmetric(rows):
    K = build_covariance(KernelSpec("matern52", [0.5, 2.0], 1.0), np.array(rows))
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)


@pytest.mark.parametrize("fam", ["matern52", "matern32"])
def test_log_derivative_matches_finite_difference(fam):
    # d log c(d / theta) / d log theta
    d, theta, h = 0.8, 0.6, 1e-6
    c = lambda lt: matern_correlation(d / math.exp(lt), fam)
    fd = (math.log(c(math.log(theta) + h)) - math.log(c(math.log(theta) - h))) / (2 * h)
    assert matern_log_derivative(d / theta, fam) == pytest.approx(fd, rel=1e-6)


def test_cholesky_jitter_escalates_for_duplicates():
    spec = KernelSpec("matern52", [1.0], 1.0)
    K = build_covariance(spec, np.array([[0.0], [0.0], [1.0]]))
    L, jitter = cholesky_jitter(K, 1.0)
    assert JITTER_START <= jitter <= JITTER_MAX
    assert np.allclose(L @ L.T, K + jitter * np.eye(3), atol=1e-12)


def test_cholesky_jitter_failure_names_matrix():
    A = np.array([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(NumericalError, match="my matrix"):
        cholesky_jitter(A, 1.0, name="my matrix")
