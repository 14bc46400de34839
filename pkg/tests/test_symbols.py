import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kato import symbols as S


def test_disk_level_and_gradient(unit_disk):
    x = np.array([[2.0, 0.0], [0.0, 0.5]])
    assert np.allclose(unit_disk.b(x) > 0, [True, False])
    g = unit_disk.grad_b(np.array([3.0, 4.0]))
    assert np.allclose(g / np.linalg.norm(g), [0.6, 0.8])


def test_cavity_is_outside_of_unit_circle():
    cav = S.cavity(1.0)
    assert cav.b(np.array([0.2, 0.1])) > 0
    assert cav.b(np.array([1.5, 0.0])) < 0
    assert cav.R0 == 1.0


def test_two_disks_components():
    ob = S.two_disks(4.0, 1.0)
    assert ob.inside(np.array([2.0, 0.0]))
    assert ob.inside(np.array([-2.0, 0.3]))
    assert not ob.inside(np.array([0.0, 0.0]))
    left = ob.component(np.array([-1.5, 0.0]))
    assert left.b(np.array([-2.0, 0.0])) < 0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 2 * np.pi), st.floats(1.05, 4.0))
def test_projection_lands_on_circle(angle, r):
    ob = S.disk(1.0)
    x = r * np.array([np.cos(angle), np.sin(angle)])
    _, y, _ = S.project_to_boundary(ob, x)
    assert abs(np.linalg.norm(y) - 1.0) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_flat_symbol_is_euclidean(x, xi):
    fld = S.flat(2)
    assert np.isclose(fld.p(np.array(x), np.array(xi)), np.dot(xi, xi))


def test_bump_metric_equals_identity_far_away():
    fld = S.conformal_bump(2, amplitude=0.1)
    A = fld.metric(np.array([50.0, 0.0]))
    assert np.allclose(A, np.eye(2), atol=1e-12)
    # analytic derivative against finite differences
    x = np.array([0.3, -0.4])
    eps = 1e-6
    fd = (fld.metric(x + [eps, 0]) - fld.metric(x - [eps, 0])) / (2 * eps)
    assert np.allclose(fld.dmetric(x)[..., 0], fd, atol=1e-8)


def test_ellipticity_holds_for_bump():
    fld = S.conformal_bump(2, amplitude=0.1)
    rep = S.check_ellipticity(fld, S.SampleSpec())
    assert rep.passed


def test_potential_kinds():
    V, gV = S.potential("quadratic")
    assert np.isclose(V(np.array([1.0, 2.0])), 6.0)
    with pytest.raises(ValueError):
        S.potential("cubic")
