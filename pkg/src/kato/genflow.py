"""Generalized (broken) bicharacteristics in the exterior domain.

Interior arcs come from :mod:`kato.hamflow`.  At a boundary hit the normal
component xi1 = n.a xi / |n|_a decides between a transversal (hyperbolic)
reflection and a glancing contact; glancing contacts are classified in a
geodesic chart and continued by diffraction (straight through), gliding
(Hamilton flow of r0 along the boundary), or, at higher-order contact, by a
microstep probe of the gliding ray.
"""
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import boundary as bd
from .errors import (EventBudgetExceeded, NotFoundWithinBudget, RegimeViolation,
                     UndeterminedContact)
from .hamflow import PhasePoint, integrate_interior


@dataclass
class FlowParams:
    max_events: int = 1000
    tol: float = 1e-11
    microstep: Optional[float] = None  # default 1e-4 R0
    exit_radius: Optional[float] = None
    band_rel: float = 1e-6
    k_max: int = 5


@dataclass
class Segment:
    kind: str  # interior | event | gliding
    s: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    label: str = ""
    info: dict = dc_field(default_factory=dict)


@dataclass
class GeneralizedTrajectory:
    segments: list
    tau: float
    t: float = 0.0
    escaped_at: Optional[float] = None

    @property
    def events(self):
        return [seg for seg in self.segments if seg.kind == "event"]

    @property
    def n_reflections(self):
        return sum(1 for e in self.events if e.label == "Hyperbolic")

    @property
    def end(self):
        seg = self.segments[-1]
        return PhasePoint(seg.x[-1], seg.xi[-1], self.t, self.tau)

    @property
    def s_end(self):
        return float(self.segments[-1].s[-1])

    def samples(self):
        """All (s, x, xi) samples concatenated in flow order."""
        s = np.concatenate([seg.s for seg in self.segments])
        x = np.concatenate([seg.x for seg in self.segments])
        xi = np.concatenate([seg.xi for seg in self.segments])
        return s, x, xi

    def min_radius(self):
        _, x, _ = self.samples()
        return float(np.min(np.linalg.norm(x, axis=1)))

    def state_at(self, s):
        """Phase point at parameter s; after an event the post-event covector is used."""
        s = float(s)
        for seg in reversed(self.segments):
            lo, hi = sorted((seg.s[0], seg.s[-1]))
            if lo - 1e-14 <= s <= hi + 1e-14:
                if seg.kind == "interior":
                    return PhasePoint(*_interp_arc(seg, s), self.t, self.tau)
                if seg.kind == "gliding":
                    return PhasePoint(*seg.info["world"](s), self.t, self.tau)
                return PhasePoint(seg.x[-1], seg.xi[-1], self.t, self.tau)
        raise ValueError(f"s = {s} outside the trajectory")

    def hit_s(self):
        """Flow parameters of the boundary events."""
        return np.array([float(e.s[0]) for e in self.events])

    def hit_points(self):
        return np.array([e.x[0] for e in self.events]).reshape(-1, self.segments[0].x.shape[1])

    def to_csv(self, path):
        d = self.segments[0].x.shape[1]
        rows = []
        for i, seg in enumerate(self.segments):
            for j in range(len(seg.s)):
                rows.append([i, seg.kind, repr(float(seg.s[j]))]
                            + [repr(float(v)) for v in seg.x[j]]
                            + [repr(float(v)) for v in seg.xi[j]] + [seg.label])
        head = ["segment_index", "kind", "s"] + [f"x{k}" for k in range(d)] \
            + [f"xi{k}" for k in range(d)] + ["class"]
        with open(path, "w") as fh:
            fh.write(",".join(head) + "\n")
            for r in rows:
                fh.write(",".join(str(v) for v in r) + "\n")


def _interp_arc(seg, s):
    y = seg.info["arc"].sol(s)
    d = seg.x.shape[1]
    return y[:d], y[d:]


def _chart_for(field, obstacle, x):
    chart = obstacle.params.get("chart")
    if chart is not None:
        return chart
    return bd.build_chart(field, obstacle, x, span=np.pi * obstacle.component(x).R0)


def glide(chart, zeta, s_span, tol=1e-11):
    """Gliding ray: Hamilton flow of r0 on the boundary, stopped where dr/dx1
    drops to zero.  Returns (s, xp, xip, dense_solution)."""
    m = zeta.xp.size

    def leave(s, y):
        return chart.dr_dx1(y[:m], y[m:])

    leave.terminal = True
    leave.direction = -1
    res = chart.r0_flow(zeta.xp, zeta.xip, s_span, events=[leave], tol=tol)
    return res.t, res.y[:m].T, res.y[m:].T, res.sol


def _world_from_chart(chart, xp, xip):
    x = chart.from_chart(0.0, xp)
    xi = chart.world_covector(0.0, xp, 0.0, xip)
    return x, xi


def _nudge(obstacle, x, amount):
    g = obstacle.component(x).grad_b(x)
    return x + amount * g / np.linalg.norm(g)


def evolve_generalized(field, obstacle, start, s_span, params=None):
    """Generalized bicharacteristic through ``start`` over ``s_span``.

    ``start`` is a PhasePoint in the interior (or on the boundary with an
    outgoing or tangential covector).  ``s_span`` may run backward.
    """
    params = params or FlowParams()
    s0, s1 = map(float, s_span)
    sgn = 1.0 if s1 >= s0 else -1.0
    tau = -float(field.p(start.x, start.xi)) if start.tau is None else float(start.tau)
    R0 = obstacle.R0 if obstacle is not None else field.R0
    micro = params.microstep if params.microstep is not None else 1e-4 * R0
    pen = 1e-9 * R0
    segments = []
    point = PhasePoint(start.x, start.xi, start.t, tau)
    s = s0
    n_events = 0
    escaped = None
    while (s1 - s) * sgn > 0:
        arc = integrate_interior(field, point, (s, s1), tol=params.tol, obstacle=obstacle,
                                 exit_radius=params.exit_radius)
        segments.append(Segment("interior", arc.s, arc.x, arc.xi, info={"arc": arc}))
        if arc.exits:
            escaped = arc.exits[0]
            break
        if arc.hit is None:
            break
        n_events += 1
        if n_events > params.max_events:
            raise EventBudgetExceeded(f"more than {params.max_events} boundary events",
                                      witness=GeneralizedTrajectory(segments, tau, start.t))
        s = arc.hit.s
        x, xi = arc.hit.point.x, arc.hit.point.xi
        xi1 = bd.normal_component(field, obstacle, x, xi)
        p = float(field.p(x, xi))
        r0 = p - xi1**2
        band = params.band_rel * (abs(r0) + abs(tau))
        if -xi1**2 < -band:
            xi_new = bd.reflect(field, obstacle, x, xi)
            segments.append(Segment("event", np.array([s, s]), np.array([x, x]),
                                    np.array([xi, xi_new]), "Hyperbolic",
                                    {"xi1": xi1}))
            point = PhasePoint(x, xi_new, start.t, tau)
            continue
        chart = _chart_for(field, obstacle, x)
        _, zeta, _ = bd.boundary_zeta(chart, x, xi, tau, start.t)
        cls = bd.classify(chart, zeta, k_max=params.k_max)
        kind = cls.kind
        if kind == "HigherOrder":
            t_, xps, xips, _ = glide(chart, zeta, (0.0, sgn * micro))
            probe = bd.BoundaryPoint(xps[-1], xips[-1], tau, start.t)
            kind = bd.classify(chart, probe, k_max=params.k_max).kind
            kind = "Gliding" if kind == "Gliding" else "Diffractive"
        if kind == "Undetermined":
            raise UndeterminedContact("infinite-order contact with the boundary", witness=zeta)
        if kind == "Hyperbolic":
            xi_new = bd.reflect(field, obstacle, x, xi)
            segments.append(Segment("event", np.array([s, s]), np.array([x, x]),
                                    np.array([xi, xi_new]), "Hyperbolic", {"xi1": xi1}))
            point = PhasePoint(x, xi_new, start.t, tau)
            continue
        # glancing: drop the normal component
        xp0 = zeta.xp
        xi_t = chart.world_covector(0.0, xp0, 0.0, zeta.xip)
        segments.append(Segment("event", np.array([s, s]), np.array([x, x]),
                                np.array([xi, xi_t]), cls.kind, cls.to_dict()))
        if kind == "Gliding":
            gs, xps, xips, sol = glide(chart, zeta, (0.0, s1 - s))
            world = np.array([_world_from_chart(chart, a, b) for a, b in zip(xps, xips)])

            def world_at(sv, sol=sol, s_base=s):
                y = sol(sv - s_base)
                m = zeta.xp.size
                return _world_from_chart(chart, y[:m], y[m:])

            segments.append(Segment("gliding", s + gs, world[:, 0], world[:, 1], "Gliding",
                                    {"xp": xps, "xip": xips, "world": world_at,
                                     "r0": [chart.r0(a, b) for a, b in zip(xps, xips)]}))
            s = s + gs[-1]
            x, xi_t = world[-1]
        point = PhasePoint(_nudge(obstacle, x, pen), xi_t, start.t, tau)
    return GeneralizedTrajectory(segments, tau, start.t, escaped)


# --------------------------------------------------------------------------
# Non-trapping and the incoming region
# --------------------------------------------------------------------------

@dataclass
class Budget:
    s_max: float = 200.0
    max_events: int = 1000


@dataclass
class NonTrapVerdict:
    kind: str  # Escaped | Trapped
    exit_radius: float
    s0: Optional[float] = None
    budget: Optional[Budget] = None
    min_radius: Optional[float] = None
    event_count: int = 0
    trajectory: Optional[GeneralizedTrajectory] = None

    @property
    def escaped(self):
        return self.kind == "Escaped"

    def to_dict(self):
        out = {"kind": self.kind, "exit_radius": self.exit_radius,
               "event_count": self.event_count}
        if self.s0 is not None:
            out["s0"] = self.s0
        if self.min_radius is not None:
            out["min_radius"] = self.min_radius
        if self.budget is not None:
            out["budget"] = {"s_max": self.budget.s_max, "max_events": self.budget.max_events}
        return out


def check_nontrapping(field, obstacle, start, budget=None, exit_radius=None, tol=1e-11):
    """Backward evolution until |x| reaches ``exit_radius`` moving outward."""
    budget = budget or Budget()
    R0 = obstacle.R0 if obstacle is not None else field.R0
    if exit_radius is None:
        exit_radius = 3.0 * R0
    if exit_radius < 3.0 * R0:
        raise ValueError("exit_radius must be at least 3 R0")
    x0 = np.asarray(start.x, float)
    outward = float(x0 @ field.dp_dxi(x0, start.xi)) < 0  # d|x|^2/ds < 0
    if np.linalg.norm(x0) >= exit_radius and outward:
        traj = GeneralizedTrajectory([Segment("interior", np.array([0.0]), x0[None],
                                              np.asarray(start.xi, float)[None])],
                                     -float(field.p(x0, start.xi)), start.t, 0.0)
        return NonTrapVerdict("Escaped", exit_radius, 0.0, trajectory=traj)
    params = FlowParams(max_events=budget.max_events, tol=tol, exit_radius=exit_radius)
    try:
        traj = evolve_generalized(field, obstacle, start, (0.0, -budget.s_max), params)
    except EventBudgetExceeded as exc:
        traj = exc.witness
        return NonTrapVerdict("Trapped", exit_radius, budget=budget,
                              min_radius=traj.min_radius(), event_count=len(traj.events),
                              trajectory=traj)
    if traj.escaped_at is not None:
        return NonTrapVerdict("Escaped", exit_radius, traj.escaped_at,
                              event_count=len(traj.events), trajectory=traj)
    return NonTrapVerdict("Trapped", exit_radius, budget=budget, min_radius=traj.min_radius(),
                          event_count=len(traj.events), trajectory=traj)


def incoming_symbol(field, x, xi):
    """a(x, xi) = sum a^{jk}(x) x_j xi_k."""
    return np.einsum("...j,...jk,...k->...", np.asarray(x, float), field.metric(x),
                     np.asarray(xi, float))


def _incoming_gap(field, x, xi, delta, R0):
    """max(3R0 - |x|, a + 3 delta |x||xi|); <= 0 exactly in the incoming region."""
    rx = np.linalg.norm(x, axis=-1)
    rxi = np.linalg.norm(xi, axis=-1)
    return np.maximum(3.0 * R0 - rx, incoming_symbol(field, x, xi) + 3.0 * delta * rx * rxi)


def find_incoming_time(field, obstacle, start, delta, R0=None, s_budget=200.0,
                       samples_per_unit=200, tol=1e-11):
    """First s1 <= 0 along the backward generalized flow where |x| >= 3R0 and
    a(x, xi) <= -3 delta |x| |xi|.  Returns (s1, witness PhasePoint)."""
    R0 = (obstacle.R0 if obstacle is not None else field.R0) if R0 is None else R0
    g0 = float(_incoming_gap(field, start.x, start.xi, delta, R0))
    if g0 <= 0:
        return 0.0, PhasePoint(start.x, start.xi, start.t, start.tau)
    traj = evolve_generalized(field, obstacle, start, (0.0, -s_budget),
                              FlowParams(tol=tol))
    for seg in traj.segments:
        if seg.kind != "interior":
            continue
        arc = seg.info["arc"]
        a, b = seg.s[0], seg.s[-1]
        n = max(8, int(abs(b - a) * samples_per_unit))
        grid = np.linspace(a, b, n + 1)
        X, XI = arc.sample(grid)
        gap = _incoming_gap(field, X, XI, delta, R0)
        hits = np.nonzero(gap <= 0)[0]
        if not len(hits):
            continue
        i = hits[0]
        if i == 0:
            return float(grid[0]), PhasePoint(X[0], XI[0], start.t, start.tau)
        lo, hi = grid[i - 1], grid[i]  # gap(lo) > 0 >= gap(hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            st = arc.state(mid)
            if _incoming_gap(field, st.x, st.xi, delta, R0) <= 0:
                hi = mid
            else:
                lo = mid
        st = arc.state(hi)
        return float(hi), PhasePoint(st.x, st.xi, start.t, start.tau)
    raise NotFoundWithinBudget(f"incoming region not reached within s >= -{s_budget}",
                               witness=traj.end)


@dataclass
class FMonitor:
    s: np.ndarray
    F1: np.ndarray
    F2: np.ndarray
    dF1: np.ndarray
    dF2: np.ndarray
    xi_norm2: np.ndarray
    delta: float

    @property
    def F(self):
        return self.F1 + self.F2

    @property
    def min_dF1_ratio(self):
        return float(np.min(self.dF1 / self.xi_norm2))

    @property
    def max_dF2_ratio(self):
        return float(np.max(self.dF2 / self.xi_norm2))

    def delta_threshold(self):
        """Largest delta for which dF1/ds - |dF2/ds| stays positive on the samples."""
        per_delta = np.abs(self.dF2) / self.delta
        with np.errstate(divide="ignore"):
            ratio = np.where(per_delta > 0, self.dF1 / per_delta, np.inf)
        return float(np.min(ratio))


def monitor_F(field, start, s_span, delta, R0=None, n_samples=801, tol=1e-12):
    """F1 = a(x, xi), F2 = 3 delta |x||xi| along the (obstacle-free) flow."""
    R0 = field.R0 if R0 is None else R0
    arc = integrate_interior(field, start, s_span, tol=tol)
    s = np.linspace(s_span[0], s_span[1], n_samples)
    X, XI = arc.sample(s)
    rx = np.linalg.norm(X, axis=1)
    if np.any(rx < 3.0 * R0):
        i = int(np.argmin(rx))
        raise RegimeViolation(f"|x| = {rx[i]:.4g} < 3 R0", witness=PhasePoint(X[i], XI[i]))
    F1 = incoming_symbol(field, X, XI)
    rxi = np.linalg.norm(XI, axis=1)
    F2 = 3.0 * delta * rx * rxi
    dF1 = np.gradient(F1, s, edge_order=2)
    dF2 = np.gradient(F2, s, edge_order=2)
    return FMonitor(s, F1, F2, dF1, dF2, rxi**2, delta)


# --------------------------------------------------------------------------
# Closed-form oracle
# --------------------------------------------------------------------------

def circle_billiard(x0, xi0, s_end, radius=1.0, inside=False, max_hits=10000):
    """Specular billiard for p = |xi|^2 against the circle |x| = radius.

    Straight legs x + 2 xi s; at each hit xi loses twice its normal part.
    ``inside`` selects the cavity (rays inside the circle) instead of the
    exterior.  Returns (hit parameters, hit points, x(s_end), xi(s_end)).
    """
    x = np.asarray(x0, float).copy()
    xi = np.asarray(xi0, float).copy()
    s, hits_s, hits_x = 0.0, [], []
    for _ in range(max_hits):
        v = 2.0 * xi
        a, b, c = v @ v, x @ v, x @ x - radius**2
        disc = b * b - a * c
        t = None
        if disc > 0:
            r = np.sqrt(disc)
            # hit from outside needs b < 0; from inside the larger root is the exit
            roots = [(-b + r) / a] if inside else ([(-b - r) / a] if b < 0 else [])
            roots = [q for q in roots if q > 1e-12]
            t = roots[0] if roots else None
        if t is None or s + t > s_end:
            break
        x = x + t * v
        s += t
        hits_s.append(s)
        hits_x.append(x.copy())
        n = x / radius
        xi = xi - 2.0 * (xi @ n) * n
    return np.array(hits_s), np.array(hits_x).reshape(-1, x.size), x + (s_end - s) * 2 * xi, xi
