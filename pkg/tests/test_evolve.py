import numpy as np
import pytest

from kato.discrete.operator import interval_operator, spectral_data
from kato.errors import ZeroData
from kato.evolve import (WavepacketFamily, WaveState, cayley_phase, eigen_evolve, propagate,
                         smoothing_quotient)


@pytest.fixture(scope="module")
def P():
    return interval_operator(120)


@pytest.fixture(scope="module")
def u0(P):
    x = P.coords[:, 0]
    u = np.exp(-(x - 1.5) ** 2 / 0.05 + 3j * x)
    return u / np.linalg.norm(u)


def test_crank_nicolson_is_unitary(P, u0):
    tr = propagate(P, u0, 0.5, 1e-3, every=100)
    assert tr.norm_drift < 1e-12
    assert tr.energy_drift < 1e-10
    assert len(tr) == 6


def test_matches_cayley_phase_exactly(P, u0):
    # CN multiplies each eigencoefficient by exp(i * cayley_phase) per step
    dt, n = 2e-3, 25
    sd = spectral_data(P)
    c = sd.vectors.T @ u0
    expect = sd.vectors @ (c * np.exp(1j * n * cayley_phase(sd.values, dt)))
    got = propagate(P, u0, n * dt, dt, every=n).states[-1]
    assert np.allclose(got, expect, atol=1e-10)


def test_second_order_convergence(P, u0):
    T = 0.05
    exact = eigen_evolve(P, u0, T)
    dts = [T / 2**k for k in (6, 7, 8)]
    errs = [np.linalg.norm(propagate(P, u0, T, d, every=10**9).states[-1] - exact) for d in dts]
    order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert 1.8 <= order <= 2.2


def test_smoothing_quotient_positive_and_zero_data(P, u0):
    chi = np.ones(P.n)
    q = smoothing_quotient(P, u0, chi, 0.05, 1e-3)
    assert q > 0
    with pytest.raises(ZeroData):
        smoothing_quotient(P, np.zeros(P.n), chi, 0.05, 1e-3)


def test_wavepacket_normalised_and_direction():
    fam = WavepacketFamily(xi0=(-2.0, 0.0))
    assert np.allclose(fam.xi0, (-1.0, 0.0))
    with pytest.raises(ZeroData):
        WaveState(np.zeros(4)).normalized()
