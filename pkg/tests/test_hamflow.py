import numpy as np
import pytest

from kato import symbols as S
from kato.errors import GrazingAmbiguity
from kato.hamflow import PhasePoint, detect_boundary_hit, integrate_interior, normal_speed


def test_flat_flow_is_straight_line(flat2):
    start = PhasePoint([0.0, 0.0], [1.0, 0.5])
    arc = integrate_interior(flat2, start, (0.0, 2.0))
    assert np.allclose(arc.x[-1], [4.0, 2.0], atol=1e-9)
    assert np.allclose(arc.xi[-1], [1.0, 0.5])


def test_energy_conserved_under_bump():
    fld = S.conformal_bump(2, amplitude=0.3)
    start = PhasePoint([-3.0, 0.2], [1.0, 0.0])
    arc = integrate_interior(fld, start, (0.0, 4.0))
    p = fld.p(arc.x, arc.xi)
    assert np.max(np.abs(p - p[0])) < 1e-8


def test_backward_integration_retraces(flat2):
    start = PhasePoint([1.0, 2.0], [-0.3, 0.7])
    fwd = integrate_interior(flat2, start, (0.0, 1.5))
    back = integrate_interior(flat2, PhasePoint(fwd.x[-1], fwd.xi[-1]), (0.0, -1.5))
    assert np.allclose(back.x[-1], start.x, atol=1e-9)


def test_hit_on_disk_is_located(flat2, unit_disk):
    start = PhasePoint([-3.0, 0.0], [1.0, 0.0])
    ev = detect_boundary_hit(flat2, unit_disk, start, 5.0)
    assert ev is not None
    # x(s) = -3 + 2 s meets x = -1 at s = 1
    assert abs(ev.s - 1.0) < 1e-8
    assert 0.0 <= unit_disk.b(ev.point.x) <= 1e-9
    assert normal_speed(flat2, unit_disk, ev.point) < -0.99


def test_miss_returns_none(flat2, unit_disk):
    start = PhasePoint([-3.0, 2.0], [1.0, 0.0])
    assert detect_boundary_hit(flat2, unit_disk, start, 5.0) is None


def test_tangent_ray_is_ambiguous(flat2, unit_disk):
    start = PhasePoint([-3.0, 1.0], [1.0, 0.0])
    with pytest.raises(GrazingAmbiguity):
        detect_boundary_hit(flat2, unit_disk, start, 5.0)
