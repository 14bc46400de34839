import numpy as np
import pytest
import scipy.linalg as sla

from kato import symbols as S
from kato.discrete import (AlmostAnalyticExtension, apply_function, dbar_slope,
                           dyadic_extension, fractional_power, hs_apply, littlewood_paley)
from kato.discrete.operator import GridSpec, assemble, interval_operator, spectral_data
from kato.discrete.scans import canonical_variant, commutator_scan, resolvent_check
from kato.errors import GridTooCoarse, SpectrumNotCovered
from kato.smooth import DyadicPartition, falling


@pytest.fixture(scope="module")
def P1():
    return interval_operator(60)


def test_interval_spectrum_matches_finite_difference_formula(P1):
    n, dx = 60, np.pi / 61
    k = np.arange(1, n + 1)
    exact = 4 / dx**2 * np.sin(k * dx / 2) ** 2 + 1.0
    sd = spectral_data(P1)
    assert np.allclose(np.sort(sd.values), exact, rtol=1e-10)


def test_fourth_order_stencil_is_closer_to_continuum():
    lam2 = np.sort(spectral_data(interval_operator(60, order=2)).values)[:3]
    lam4 = np.sort(spectral_data(interval_operator(60, order=4)).values)[:3]
    cont = np.array([1, 4, 9]) + 1.0
    assert np.all(np.abs(lam4 - cont) < np.abs(lam2 - cont))


@pytest.mark.parametrize("order", [2, 4])
def test_disk_exterior_operator_is_symmetric(order):
    P = assemble(S.flat(2), S.disk(), GridSpec(dim=2, dx=0.0625, L=2.0, order=order))
    A = P.matrix
    assert abs(A - A.T).max() < 1e-12
    assert np.all(S.disk().b(P.coords) > 0)
    with pytest.raises(GridTooCoarse):
        assemble(S.flat(2), S.disk(), GridSpec(dim=2, dx=0.25, L=3.0))


def test_fourth_order_box_ground_state():
    # -Laplacian + 1 on [-1, 1]^2: lowest eigenvalue 2 (pi/2)^2 + 1
    P = assemble(S.flat(2), None, GridSpec(dim=2, dx=0.1, L=1.0, order=4))
    lam = np.min(np.linalg.eigvalsh(P.matrix.toarray()))
    assert abs(lam - (2 * (np.pi / 2) ** 2 + 1)) < 1e-4


def test_hs_backend_agrees_with_eigen(P1, rng):
    ext = dyadic_extension(3)
    h = 1 / 16
    V = rng.normal(size=(60, 3))
    hs = hs_apply(h * h * P1.matrix, ext, V)
    eig = apply_function(P1, DyadicPartition().theta, h, V)
    assert np.linalg.norm(hs - eig) <= 1e-3 * np.linalg.norm(eig)


def test_dbar_slope_reaches_order():
    slope, peaks = dbar_slope(dyadic_extension(3))
    assert slope >= 2.9
    assert np.all(np.diff(peaks) < 0)


def test_fractional_power_composes(P1, rng):
    v = rng.normal(size=60)
    half = fractional_power(P1, 0.5, fractional_power(P1, 0.5, v))
    assert np.allclose(half, fractional_power(P1, 1.0, v), rtol=1e-10)
    with pytest.raises(ValueError):
        fractional_power(P1, 1.5, v)


def test_littlewood_paley_reconstructs(P1, rng):
    v = rng.normal(size=60)
    lp = littlewood_paley(P1, v, 14)
    assert lp.residual < 1e-10
    assert 0.5 <= lp.norm_ratio <= 2.0
    with pytest.raises(SpectrumNotCovered):
        littlewood_paley(P1, v, 3)


def test_resolvent_bound(P1, rng):
    f = rng.normal(size=(60, 4))
    rep = resolvent_check(P1, 0.5 + 0.2j, 0.25, f)
    assert rep.bound_slack <= 1e-10
    assert rep.residual < 1e-10


def test_commutator_slope_short_scan():
    P = interval_operator(1023, length=4 * np.pi)
    chi = falling(P.coords[:, 0], 0.0, 4 * np.pi, order=2)
    res = commutator_scan(P, chi, DyadicPartition(2).theta, 2.0 ** -np.arange(2, 7),
                          "commutator")
    assert 0.7 <= res.slope <= 1.3
    assert canonical_variant("L63i") == "commutator"
