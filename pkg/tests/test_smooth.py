import numpy as np
from hypothesis import given, settings, strategies as st

from kato.smooth import DyadicPartition, falling, radial_cutoff, rising, smoothstep


def test_smoothstep_endpoints_and_flatness():
    t = np.array([-0.5, 0.0, 0.5, 1.0, 1.5])
    assert np.allclose(smoothstep(t), [0, 0, 0.5, 1, 1])
    for k in range(1, 6):
        assert np.allclose(smoothstep(np.array([0.0, 1.0]), deriv=k), 0.0, atol=1e-12)


def test_rising_falling_derivative_consistency():
    t = np.linspace(0.1, 0.9, 9)
    eps = 1e-6
    fd = (rising(t + eps, 0, 1) - rising(t - eps, 0, 1)) / (2 * eps)
    assert np.allclose(rising(t, 0, 1, deriv=1), fd, atol=1e-7)
    assert np.allclose(falling(t, 0, 1) + rising(t, 0, 1), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 2.0**12, allow_nan=False))
def test_partition_telescopes_to_one(t):
    part = DyadicPartition()
    total = part.psi(t) + sum(part.theta(t / 2.0**p) for p in range(14))
    assert abs(total - 1.0) < 1e-12


def test_theta_support():
    part = DyadicPartition()
    t = np.linspace(0, 4, 4001)
    th = part.theta(t)
    assert np.all(th[(t < 0.5) | (t > 2.0)] == 0)
    assert np.all(th >= -1e-15)


def test_radial_cutoff_gradient():
    x = np.array([[1.3, 0.4], [0.0, 0.0], [3.0, 0.0]])
    g = radial_cutoff(x, 1.0, 2.0, deriv=1)
    eps = 1e-6
    fd = (radial_cutoff(x + [eps, 0], 1.0, 2.0) - radial_cutoff(x - [eps, 0], 1.0, 2.0)) / (2 * eps)
    assert np.allclose(g[:, 0], fd, atol=1e-7)
    assert np.allclose(radial_cutoff(x, 1.0, 2.0)[1:], [1.0, 0.0])
