import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from decoremoval.errors import InputError
from decoremoval.rff import SQRT2, RffMap, kernel_estimate, rff_transform, sample_rff_map


def test_shapes():
    m = sample_rff_map(3, 5, seed=7)
    assert m.omega.shape == (5, 3) and m.phi.shape == (5,)


def test_same_seed_same_map():
    a, b = sample_rff_map(4, 9, 11), sample_rff_map(4, 9, 11)
    assert np.array_equal(a.omega, b.omega) and np.array_equal(a.phi, b.phi)


def test_frequency_moments():
    m = sample_rff_map(1, 10000, seed=0)
    assert abs(m.omega.mean()) < 0.05
    assert np.all((m.phi >= 0) & (m.phi < 2 * math.pi))


@pytest.mark.parametrize("phi,expected", [(0.0, SQRT2), (math.pi / 2, 0.0)])
def test_zero_frequency(phi, expected):
    m = RffMap(np.zeros((4, 2)), np.full(4, phi))
    Z = rff_transform(m, np.random.default_rng(0).standard_normal((3, 2)))
    np.testing.assert_allclose(Z, expected, atol=1e-15)


def test_cos_pi():
    m = RffMap([[math.pi]], [0.0])
    assert rff_transform(m, [[1.0]])[0, 0] == pytest.approx(-SQRT2, abs=1e-15)


def test_rejects_bad_phase():
    with pytest.raises(InputError):
        RffMap(np.zeros((1, 1)), [2 * math.pi])


def test_rejects_wrong_dim():
    with pytest.raises(InputError):
        rff_transform(sample_rff_map(3, 2, 0), np.zeros((2, 4)))


@settings(max_examples=50, deadline=None)
@given(X=arrays(np.float64, (6, 3), elements=st.floats(-50, 50)),
       seed=st.integers(0, 10**6), norm=st.floats(0.1, 5))
def test_bounded_and_pure(X, seed, norm):
    m = sample_rff_map(3, 8, seed, normalization=norm)
    Z = rff_transform(m, X)
    assert np.all(np.abs(Z) <= norm * (1 + 1e-12))
    assert np.array_equal(Z, rff_transform(m, X))


@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, 4, elements=st.floats(-5, 5)),
       y=arrays(np.float64, 4, elements=st.floats(-5, 5)))
def test_kernel_symmetric(x, y):
    m = sample_rff_map(4, 64, 3)
    assert kernel_estimate(m, x, y) == kernel_estimate(m, y, x)


@pytest.mark.parametrize("x,y,expected", [
    ([0.0], [0.0], 1.0),
    ([0.0], [1.0], math.exp(-0.5)),   # 0.6065...
    ([0.0], [10.0], 0.0),
])
def test_kernel_estimate_values(x, y, expected):
    m = sample_rff_map(1, 2000, seed=5)
    assert abs(kernel_estimate(m, x, y) - expected) <= 0.05


def test_estimator_spread_matches_theory():
    # per-feature variance of 2 cos(a) cos(b) is (1 + k(2r)) / 2 + 1/2 - k(r)^2
    m, r = 2000, 1.0
    k1, k2 = math.exp(-r ** 2 / 2), math.exp(-2 * r ** 2)
    sd = math.sqrt(((1 + k2) / 2 + 0.5 - k1 ** 2) / m)
    errs = np.array([kernel_estimate(sample_rff_map(1, m, seed), [0.0], [r]) - k1
                     for seed in range(400)])
    assert abs(errs.mean()) <= 3 * sd / math.sqrt(400)
    assert 0.85 * sd <= errs.std() <= 1.15 * sd
