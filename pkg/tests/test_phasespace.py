import numpy as np
import pytest

from kato.errors import AliasRisk, GridTooCoarse
from kato.phasespace import PhaseGrid, coherent_state, husimi, quantize_spatial


def _grid_1d(n=256, L=8.0):
    dx = 2 * L / n
    return -L + dx * np.arange(n), dx


def test_quantize_multiplier_matches_direct_sum():
    x, dx = _grid_1d()
    h = 0.1
    u = np.exp(-x**2) * np.exp(1j * x / h * 0.5)
    sym = lambda X, XI: XI[..., 0] * np.exp(-4 * XI[..., 0] ** 2)  # noqa: E731
    got = quantize_spatial(sym, h, u, dx, origin=[x[0]], x_dependent=False)
    direct = quantize_spatial(sym, h, u, dx, origin=[x[0]], x_dependent=True)
    assert np.allclose(got, direct, atol=1e-10)
    # against the spectral multiplier applied by hand
    eta = 2 * np.pi * np.fft.fftfreq(x.size, dx)
    ref = np.fft.ifft(sym(None, (h * eta)[:, None]) * np.fft.fft(u))
    assert np.allclose(got, ref, atol=1e-10)


def test_quantize_x_only_symbol_is_multiplication():
    x, dx = _grid_1d(128)
    u = np.exp(-x**2).astype(complex)
    out = quantize_spatial(lambda X, XI: np.cos(X[..., 0]) * np.ones(XI.shape[:-1]), 0.5, u,
                           dx, origin=[x[0]], alias_fraction=2.0)
    assert np.allclose(out, np.cos(x) * u, atol=1e-10)


def test_quantize_refuses_aliasing():
    x, dx = _grid_1d(64)
    with pytest.raises(AliasRisk):
        quantize_spatial(lambda X, XI: np.ones(XI.shape[:-1]), 0.1, np.ones(64), dx)


def test_coherent_state_husimi_peak_and_mass():
    h = 0.05
    x, dx = _grid_1d(512, 4.0)
    u = coherent_state(x[:, None], np.array([0.5]), np.array([-0.7]), h)
    u = u / (np.linalg.norm(u) * np.sqrt(dx))
    phase = PhaseGrid.window([0.5], [-0.7], 1.0, 1.0, 0.4 * np.sqrt(h))
    meas = husimi(u, h, phase, dx, origin=[x[0]])
    X, XI = meas.peak()
    assert abs(X[0] - 0.5) < 0.06 and abs(XI[0] + 0.7) < 0.06
    cx, cxi = meas.centroid()
    assert abs(cx[0] - 0.5) < 1e-3 and abs(cxi[0] + 0.7) < 1e-3
    assert 0.95 < meas.mass <= 1.0 + 1e-6


def test_coarse_phase_grid_rejected():
    x, dx = _grid_1d(64)
    phase = PhaseGrid.window([0.0], [0.0], 1.0, 1.0, 0.5)
    with pytest.raises(GridTooCoarse):
        husimi(np.ones(64), 0.01, phase, dx, origin=[x[0]])
