import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icbar import transform as tf
from icbar.errors import DomainError

RS = [0.0, 0.5, 1.0, 1.8, 3.0]
xs = st.floats(min_value=0.0, max_value=50.0, allow_nan=False)
rs = st.floats(min_value=0.0, max_value=5.0, allow_nan=False)


def central(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


class TestSpec:
    def test_negative_r_rejected(self):
        with pytest.raises(DomainError):
            tf.TransformationSpec(-0.1)

    def test_identity_flag(self):
        assert tf.TransformationSpec(0.0).is_identity
        assert not tf.TransformationSpec(1.0).is_identity


class TestExamples:
    def test_g(self):
        assert tf.g(0, 2.5) == 2.5
        assert tf.g(1, 0) == 0.0
        assert tf.g(1, 1) == pytest.approx(math.log(2), abs=1e-15)

    def test_g_prime(self):
        assert tf.g_prime(0, 7) == 1.0
        assert tf.g_prime(1, 0) == 1.0
        # oracle: central difference of g
        fd = central(lambda x: tf.g(1, x), 1.0)
        assert tf.g_prime(1, 1) == pytest.approx(0.5, abs=1e-12)
        assert abs(tf.g_prime(1, 1) - fd) < 1e-8

    def test_g_inverse(self):
        assert tf.g_inverse(0, 0.3) == 0.3
        assert tf.g_inverse(1, math.log(2)) == pytest.approx(1.0, abs=1e-14)
        # frozen from a 30-digit evaluation of (e^0.5 - 1) / 0.5
        y = tf.g_inverse(0.5, 1.0)
        assert y == pytest.approx(1.2974425414002563, abs=1e-14)
        assert tf.g(0.5, y) == pytest.approx(1.0, abs=1e-12)

    def test_g_tilde(self):
        assert tf.g_tilde(0, 0) == 1.0
        assert tf.g_tilde(0, 1) == pytest.approx(0.36787944117144233, abs=1e-15)
        assert tf.g_tilde(1, 1) == pytest.approx(0.25, abs=1e-12)
        composed = tf.g_prime(1, 1.0) * math.exp(-tf.g(1, 1.0))
        assert tf.g_tilde(1, 1) == pytest.approx(composed, abs=1e-12)

    def test_g_tilde_prime(self):
        assert tf.g_tilde_prime(0, 0) == -1.0
        assert tf.g_tilde_prime(1, 0) == pytest.approx(-2.0, abs=1e-12)
        # one-sided second-order difference at the boundary
        h = 1e-5
        fd = (-3 * tf.g_tilde(1, 0.0) + 4 * tf.g_tilde(1, h) - tf.g_tilde(1, 2 * h)) / (2 * h)
        assert abs(tf.g_tilde_prime(1, 0) - fd) < 1e-6
        v = tf.g_tilde_prime(0.5, 2.0)
        assert v < 0
        assert v == pytest.approx(-0.09375, abs=1e-12)
        assert abs(v - central(lambda x: tf.g_tilde(0.5, x), 2.0)) < 1e-6

    @pytest.mark.parametrize("fn", [tf.g, tf.g_prime, tf.g_inverse, tf.g_tilde, tf.g_tilde_prime])
    def test_domain_errors(self, fn):
        with pytest.raises(DomainError):
            fn(1.0, -0.5)
        with pytest.raises(DomainError):
            fn(1.0, np.array([0.1, float("nan")]))

    def test_arrays_keep_shape(self):
        x = np.linspace(0, 3, 7).reshape(7, 1)
        assert tf.g(1.0, x).shape == (7, 1)
        assert isinstance(tf.g(1.0, 2.0), float)


class TestInvariants:
    @pytest.mark.parametrize("r", RS)
    def test_round_trip_grid(self, r):
        x = np.arange(0, 1001) * 0.01
        assert np.max(np.abs(tf.g_inverse(r, tf.g(r, x)) - x)) < 1e-10

    def test_small_r_continuity(self):
        x = np.linspace(0, 10, 101)
        assert np.max(np.abs(tf.g(1e-8, x) - x)) < 1e-6
        assert np.max(np.abs(tf.g(1e-12, x) - x)) == 0.0

    @pytest.mark.parametrize("r", RS)
    def test_finite_differences(self, r):
        for x in np.linspace(0.05, 8, 25):
            fd = central(lambda t: tf.g(r, t), x)
            assert abs(tf.g_prime(r, x) - fd) / abs(fd) < 1e-5
            fd = central(lambda t: tf.g_tilde(r, t), x)
            assert abs(tf.g_tilde_prime(r, x) - fd) / abs(fd) < 1e-5

    @given(r=rs, x=xs, y=xs)
    def test_shape_properties(self, r, x, y):
        lo, hi = min(x, y), max(x, y)
        assert tf.g(r, lo) <= tf.g(r, hi)
        assert tf.g(r, 0.0) == 0.0
        assert tf.g_prime(r, x) > 0
        gt = tf.g_tilde(r, x)
        assert 0 < gt <= 1
        assert tf.g_tilde_prime(r, x) <= 0

    @given(r=st.one_of(st.just(0.0), st.floats(min_value=1e-3, max_value=5.0)), x=st.floats(min_value=0.0, max_value=1e6))
    def test_closed_forms(self, r, x):
        if r > 0:
            assert tf.g_tilde(r, x) == pytest.approx((1 + r * x) ** (-1 - 1 / r), rel=1e-9, abs=1e-300)
        else:
            assert tf.g_tilde(r, x) == pytest.approx(math.exp(-x), rel=1e-12, abs=1e-300)

    @settings(max_examples=200)
    @given(r=rs, y=st.floats(min_value=0.0, max_value=30.0))
    def test_inverse_then_forward(self, r, y):
        assert tf.g(r, tf.g_inverse(r, y)) == pytest.approx(y, rel=1e-12, abs=1e-12)

    @given(r=rs, base=xs, inc=xs)
    def test_increment_matches_difference(self, r, base, inc):
        direct = tf.g(r, base + inc) - tf.g(r, base)
        assert tf._g_increment(r, base, inc) == pytest.approx(direct, rel=1e-9, abs=1e-12)

    def test_large_argument_stable(self):
        assert np.isfinite(tf.g(3.0, 1e300))
        assert tf.g_tilde(3.0, 1e300) >= 0
