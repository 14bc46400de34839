import numpy as np
import pytest

from kato import genflow as gf, symbols as S
from kato.errors import RegimeViolation
from kato.hamflow import PhasePoint


def test_circle_billiard_oracle_two_hits_in_cavity():
    # horizontal chord through the centre bounces back and forth
    hs, hx, xe, xie = gf.circle_billiard([0.0, 0.0], [1.0, 0.0], 1.2, inside=True)
    assert np.allclose(hs, [0.5])
    assert np.allclose(hx, [[1.0, 0.0]])
    assert np.allclose(xe, [-0.4, 0.0]) and np.allclose(xie, [-1.0, 0.0])


def test_reflection_off_disk_matches_oracle(flat2, unit_disk):
    x0, xi0 = np.array([-3.0, 0.3]), np.array([1.0, 0.0])
    tr = gf.evolve_generalized(flat2, unit_disk, PhasePoint(x0, xi0), (0.0, 2.5))
    _, hx, xe, _ = gf.circle_billiard(x0, xi0, 2.5)
    assert tr.n_reflections == 1
    assert np.allclose(tr.hit_points(), hx, atol=1e-8)
    assert np.allclose(tr.end.x, xe, atol=1e-8)


def test_cavity_reflections_match_oracle(flat2):
    x0, xi0 = np.array([0.2, -0.1]), np.array([np.cos(1.1), np.sin(1.1)])
    tr = gf.evolve_generalized(flat2, S.cavity(), PhasePoint(x0, xi0), (0.0, 3.0))
    _, hx, xe, _ = gf.circle_billiard(x0, xi0, 3.0, inside=True)
    assert tr.n_reflections == len(hx) >= 3
    assert np.allclose(tr.hit_points(), hx, atol=1e-7)
    assert np.allclose(tr.end.x, xe, atol=1e-7)


def test_single_disk_escapes(flat2, unit_disk):
    v = gf.check_nontrapping(flat2, unit_disk, PhasePoint([1.5, 0.2], [0.3, -1.0]))
    assert v.escaped and v.s0 < 0


def test_two_disk_axis_is_trapped(flat2):
    v = gf.check_nontrapping(flat2, S.two_disks(), PhasePoint([0.0, 0.0], [1.0, 0.0]),
                             gf.Budget(s_max=40.0, max_events=1000))
    assert v.kind == "Trapped" and v.event_count >= 10


def test_exit_radius_guard(flat2, unit_disk):
    with pytest.raises(ValueError):
        gf.check_nontrapping(flat2, unit_disk, PhasePoint([2.0, 0.0], [1.0, 0.0]),
                             exit_radius=2.0)


@pytest.mark.parametrize("delta", [0.1, 0.05])
def test_incoming_witness_satisfies_both_conditions(flat2, delta):
    s1, w = gf.find_incoming_time(flat2, None, PhasePoint([5.0, 0.3], [1.0, 0.2]), delta, R0=1.0)
    assert s1 < 0
    a = gf.incoming_symbol(flat2, w.x, w.xi)
    assert np.linalg.norm(w.x) >= 3.0
    assert a <= -3 * delta * np.linalg.norm(w.x) * np.linalg.norm(w.xi) + 1e-9


def test_monitor_in_flat_space(flat2):
    # dF1/ds = 2 |xi|^2 exactly for the flat symbol
    m = gf.monitor_F(flat2, PhasePoint([-6.0, 1.0], [1.0, 0.0]), (0.0, -5.0), 0.1, R0=1.0)
    assert np.isclose(m.min_dF1_ratio, 2.0, atol=1e-6)
    assert m.max_dF2_ratio <= 0.6


def test_monitor_refuses_small_radius(flat2):
    with pytest.raises(RegimeViolation):
        gf.monitor_F(flat2, PhasePoint([5.0, 0.0], [1.0, 0.0]), (0.0, -5.0), 0.1, R0=1.0)
