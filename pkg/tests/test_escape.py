import numpy as np
import pytest

from kato import escape as E, symbols as S


def test_params_validation():
    assert np.isclose(E.EscapeParams(delta=0.2).epsilon, 0.02)
    with pytest.raises(ValueError):
        E.EscapeParams(delta=0.1, epsilon=0.2)
    with pytest.raises(ValueError):
        E.EscapeParams(nu=0.0)


def test_cutoff_partition_of_unity():
    cf = E.CutoffFamily(E.EscapeParams())
    t = np.linspace(-1, 1, 401)
    assert np.allclose(cf.psi0(t) + cf.psi(t) + cf.psi(-t), 1.0)
    assert np.all(np.abs(cf.psi1(t)) <= 1.0)


def test_flat_e0_bracket_closed_form():
    # flat: H_p a = 2 |xi|^2 and H_p <xi> = 0, so H_p e0 = 2 |xi|^2 / <xi>
    fld = S.flat(2)
    rng = np.random.default_rng(3)
    x, xi = rng.normal(size=(50, 2)) * 3, rng.normal(size=(50, 2))
    expect = 2 * np.sum(xi**2, -1) / np.sqrt(1 + np.sum(xi**2, -1))
    assert np.allclose(E.hamilton_e0(fld, x, xi), expect, rtol=1e-8)


def test_numeric_bracket_matches_closed_form():
    fld = S.conformal_bump(2, amplitude=0.2)
    x, xi = np.array([[0.7, -0.2]]), np.array([[0.4, 1.1]])
    num = E.hamilton_derivative(fld, lambda X, XI: E.e0(fld, X, XI), x, xi)
    assert np.allclose(num, E.hamilton_e0(fld, x, xi), rtol=1e-5)


def test_small_grid_report_passes():
    p = E.EscapeParams(nu=0.1)
    grid = E.EscapeGrid.covering(p, (12, 16, 12, 16))
    rep = E.check_escape_inequalities(p, E.CutoffFamily(p), S.flat(2), grid)
    assert rep.hphi_sign_margin >= 0 and rep.lambda_sign_margin >= 0
    assert rep.escape_C > 0 and rep.passed
    assert rep.n_points == grid.size
