import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kato import boundary as B, symbols as S
from kato.errors import NotHyperbolic


@pytest.fixture(scope="module")
def disk_chart():
    return B.build_chart(S.flat(2), S.disk(), np.array([1.0, 0.0]))


def test_disk_chart_symbol(disk_chart):
    # flat metric, unit circle: r(0, x', xi') = xi'^2 and dr/dx1 = -2 xi'^2
    assert np.isclose(disk_chart.r0([0.0], [0.7]), 0.49, atol=1e-8)
    assert np.isclose(disk_chart.dr_dx1([0.0], [0.7]), -0.98, rtol=1e-4)


@pytest.mark.parametrize("tau, kind", [(-0.16, "Elliptic"), (-1.0, "Hyperbolic")])
def test_disk_elliptic_hyperbolic(disk_chart, tau, kind):
    assert B.classify(disk_chart, B.BoundaryPoint([0.0], [0.6], tau)).kind == kind


def test_disk_glancing_is_diffractive(disk_chart):
    assert B.classify(disk_chart, B.BoundaryPoint([0.0], [1.0], -1.0)).kind == "Diffractive"


def test_concave_model_glides():
    ch = B.SyntheticChart(lambda x1, xp, xip: float(xip @ xip) / (1 - x1) ** 2)
    assert B.classify(ch, B.BoundaryPoint([0.0], [1.0], -1.0)).kind == "Gliding"


def test_inflection_model_is_third_order():
    ch = B.SyntheticChart(lambda x1, xp, xip: float(xip @ xip) * (1 + x1 * xp[0]))
    cls = B.classify(ch, B.BoundaryPoint([0.0], [1.0], -1.0))
    assert cls.kind == "HigherOrder" and cls.k == 3


def test_half_space_glancing_undetermined():
    cls = B.classify(B.half_space(), B.BoundaryPoint([0.0], [1.0], -1.0))
    assert cls.kind == "Undetermined"


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(-0.9, 0.9), st.sampled_from([0.5, 2.0, 3.0]))
def test_classification_is_homogeneous(xip, rel_gap, lam):
    ch = B.half_space()
    tau = -xip**2 * (1 + rel_gap)
    z = B.BoundaryPoint([0.0], [xip], tau)
    assert B.classify(ch, z).kind == B.classify(ch, z.scaled(lam)).kind


def test_hyperbolic_roots_and_error(disk_chart):
    p, m = B.hyperbolic_roots(disk_chart, B.BoundaryPoint([0.0], [0.6], -1.0))
    assert np.isclose(p, 0.8, atol=1e-8) and np.isclose(m, -0.8, atol=1e-8)
    with pytest.raises(NotHyperbolic):
        B.hyperbolic_roots(disk_chart, B.BoundaryPoint([0.0], [0.6], -0.1))


def test_reflection_keeps_energy_and_flips_normal(flat2, unit_disk):
    x = np.array([np.cos(0.4), np.sin(0.4)])
    xi = np.array([-0.9, 0.2])
    out = B.reflect(flat2, unit_disk, x, xi)
    assert np.isclose(flat2.p(x, out), flat2.p(x, xi))
    assert np.isclose(B.normal_component(flat2, unit_disk, x, out),
                      -B.normal_component(flat2, unit_disk, x, xi))
