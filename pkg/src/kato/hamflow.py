"""Interior Hamilton flow of p(x, xi) = xi . a(x) xi with boundary events.

The flow equations are dx/ds = 2 a(x) xi and dxi_l/ds = -xi . (d_l a) xi; the
potential does not enter.  Integration uses scipy's DOP853 (embedded 8(5,3)
Runge-Kutta with dense output), and boundary hits are located on the dense
output.
"""
from dataclasses import dataclass, field as dc_field, replace
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import GrazingAmbiguity, LeftDomain, StepFailure


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray
    t: float = 0.0
    tau: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).copy())
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float).copy())

    @property
    def dim(self):
        return self.x.size

    def on_sigma(self, field, tol=1e-8):
        """True when tau + p(x, xi) = 0 (tau defaults to -p)."""
        p = float(field.p(self.x, self.xi))
        tau = -p if self.tau is None else self.tau
        return abs(tau + p) <= tol * (1.0 + abs(p))

    def distance(self, other):
        return float(np.hypot(np.linalg.norm(self.x - other.x), np.linalg.norm(self.xi - other.xi)))

    def moved(self, x, xi):
        return replace(self, x=np.asarray(x, float), xi=np.asarray(xi, float))


@dataclass
class HitEvent:
    s: float
    point: PhasePoint


@dataclass
class InteriorArc:
    s: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    sol: object = None
    nfev: int = 0
    hit: Optional[HitEvent] = None
    grazes: list = dc_field(default_factory=list)
    exits: list = dc_field(default_factory=list)

    @property
    def start(self):
        return PhasePoint(self.x[0], self.xi[0])

    @property
    def end(self):
        return PhasePoint(self.x[-1], self.xi[-1])

    def state(self, s):
        """Phase point at parameter s (dense output)."""
        y = self.sol(s)
        d = self.x.shape[1]
        return PhasePoint(y[:d], y[d:])

    def sample(self, s_values):
        y = np.asarray(self.sol(np.asarray(s_values, float)))
        d = self.x.shape[1]
        return y[:d].T, y[d:].T

    def energy_drift(self, field):
        p = field.p(self.x, self.xi)
        return float(np.max(np.abs(p - p[0])))

    def to_csv(self, path):
        d = self.x.shape[1]
        header = ",".join(["s"] + [f"x{i}" for i in range(d)] + [f"xi{i}" for i in range(d)])
        np.savetxt(path, np.column_stack([self.s, self.x, self.xi]), delimiter=",",
                   header=header, comments="")


def hamilton_rhs(field):
    d = field.dim

    def rhs(s, y):
        x, xi = y[:d], y[d:]
        dx, dxi = field.hamilton_vector(x, xi)
        return np.concatenate([dx, dxi])

    return rhs


def _refine_outside(g, s_in, s_out, atol=1e-10, max_iter=200):
    """Bisection for a point with 0 <= g <= atol between s_out (g>0) and s_in (g<=0)."""
    g_out = g(s_out)
    if 0.0 <= g_out <= atol:
        return s_out
    for _ in range(max_iter):
        mid = 0.5 * (s_in + s_out)
        if mid == s_in or mid == s_out:
            break
        gm = g(mid)
        if gm > atol:
            s_out = mid
        elif gm < 0.0:
            s_in = mid
        else:
            return mid
    return s_out


def integrate_interior(field, start, s_span, tol=1e-11, obstacle=None,
                       penetration_tol=None, graze_band=1e-6, exit_radius=None,
                       max_step=np.inf):
    """Integrate the flow of p from ``start`` over ``s_span`` (either direction).

    With an obstacle the arc is truncated at the first crossing of {b = 0};
    the final sample is located to 0 <= b <= 1e-10.  With ``exit_radius`` the
    arc is also truncated when |x| crosses that radius moving outward in the
    direction of integration.  Local minima of b along the arc are recorded in
    ``grazes`` as (s, b_min).
    """
    s0, s1 = map(float, s_span)
    d = field.dim
    y0 = np.concatenate([start.x, start.xi])
    rhs = hamilton_rhs(field)
    events = []
    hit_event = graze_event = exit_event = None
    if obstacle is not None:
        if penetration_tol is None:
            penetration_tol = 1e-9 * obstacle.R0
        # events are only seen if b changes sign between step ends, so steps
        # must stay short compared with the obstacle
        speed = float(np.linalg.norm(field.dp_dxi(start.x, start.xi)))
        if speed > 0:
            scale = min(obstacle.R0, obstacle.params.get("feature", obstacle.R0))
            max_step = min(max_step, 0.05 * scale / speed)

        def hit_event(s, y):
            return float(obstacle.b(y[:d]))

        hit_event.terminal = True
        hit_event.direction = -1
        events.append(hit_event)

        def graze_event(s, y):
            x, xi = y[:d], y[d:]
            return float(obstacle.grad_b(x) @ field.dp_dxi(x, xi))

        graze_event.terminal = False
        graze_event.direction = 0
        events.append(graze_event)
    if exit_radius is not None:
        def exit_event(s, y):
            return float(y[:d] @ y[:d] - exit_radius**2)

        exit_event.terminal = True
        exit_event.direction = 1
        events.append(exit_event)
    if s1 == s0:
        return InteriorArc(np.array([s0]), y0[None, :d], y0[None, d:])
    res = solve_ivp(rhs, (s0, s1), y0, method="DOP853", rtol=tol, atol=tol * 1e-2,
                    dense_output=True, events=events or None, max_step=max_step)
    if res.status == -1:
        raise StepFailure(res.message, witness=start)
    s_arr, Y = res.t, res.y
    hit = None
    grazes, exits = [], []
    k = 0
    if obstacle is not None:
        hit_s = res.t_events[0]
        for s_g, y_g in zip(res.t_events[1], res.y_events[1]):
            grazes.append((float(s_g), float(obstacle.b(y_g[:d]))))
        if len(hit_s):
            s_hit = float(hit_s[0])
            g = lambda s: float(obstacle.b(res.sol(s)[:d]))
            prev = s_arr[-2] if len(s_arr) > 1 else s0
            s_hit = _refine_outside(g, s_hit, prev)
            y_hit = res.sol(s_hit)
            keep = (s_arr - s_hit) * np.sign(s1 - s0) < 0
            s_arr = np.append(s_arr[keep], s_hit)
            Y = np.column_stack([Y[:, keep], y_hit])
            hit = HitEvent(s_hit, PhasePoint(y_hit[:d], y_hit[d:], start.t, start.tau))
            grazes = [gz for gz in grazes if (gz[0] - s_hit) * np.sign(s1 - s0) < 0]
        else:
            bvals = obstacle.b(Y[:d].T)
            if np.min(bvals) < -penetration_tol:
                i = int(np.argmin(bvals))
                raise LeftDomain("trajectory entered the obstacle undetected",
                                 witness=PhasePoint(Y[:d, i], Y[d:, i]))
        k = 2
    if exit_radius is not None and len(res.t_events[k]):
        exits.append(float(res.t_events[k][0]))
    return InteriorArc(s_arr, Y[:d].T.copy(), Y[d:].T.copy(), res.sol, res.nfev,
                       hit, grazes, exits)


def normal_speed(field, obstacle, point):
    """Cosine between the velocity 2 a xi and the outward normal of {b = 0}."""
    g = obstacle.grad_b(point.x)
    v = field.dp_dxi(point.x, point.xi)
    denom = float(np.linalg.norm(g) * np.linalg.norm(v))
    return float(g @ v) / denom if denom > 0 else 0.0


def detect_boundary_hit(field, obstacle, start, s_max, tol=1e-11, graze_band=1e-6):
    """First boundary crossing on [0, s_max] (s_max < 0 integrates backward).

    Returns a HitEvent or None.  Raises GrazingAmbiguity when the arc comes
    within ``graze_band`` of the boundary without crossing it, or crosses it
    at an angle whose cosine is below sqrt(graze_band).
    """
    arc = integrate_interior(field, start, (0.0, s_max), tol=tol, obstacle=obstacle,
                             graze_band=graze_band)
    for s_g, b_g in arc.grazes:
        if b_g < graze_band:
            raise GrazingAmbiguity(f"glancing approach at s={s_g:.6g} (b={b_g:.2e})",
                                   witness=arc.state(s_g))
    if arc.hit is not None:
        cos = normal_speed(field, obstacle, arc.hit.point)
        if abs(cos) < np.sqrt(graze_band):
            raise GrazingAmbiguity(f"glancing hit at s={arc.hit.s:.6g} (cos={cos:.2e})",
                                   witness=arc.hit.point)
    return arc.hit
