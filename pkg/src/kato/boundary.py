"""Boundary charts x <-> (x1, x') with p = xi1^2 + r(x1, x', xi') and the
classification of boundary phase points.

A chart exposes r and the derived quantities used by the classifier:
dr/dx1 at x1 = 0, r0 = r(0, .) and the Hamilton field of r0 on T*(boundary).
Tangential variables x', xi' are arrays of length d - 1.
"""
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ChartDomainExceeded, DerivativeUnstable, NotHyperbolic
from .symbols import project_to_boundary


def richardson_derivative(fun, x0, step):
    """Central difference of a scalar function with one Richardson step.

    Returns (value, error_estimate).
    """
    def central(h):
        return (fun(x0 + h) - fun(x0 - h)) / (2.0 * h)

    d1, d2 = central(step), central(step / 2.0)
    return (4.0 * d2 - d1) / 3.0, abs(d2 - d1) / 3.0


@dataclass(frozen=True)
class BoundaryPoint:
    """zeta = (x', t, xi', tau) on T*(boundary) x T*R_t."""

    xp: np.ndarray
    xip: np.ndarray
    tau: float
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "xp", np.atleast_1d(np.asarray(self.xp, float)))
        object.__setattr__(self, "xip", np.atleast_1d(np.asarray(self.xip, float)))

    def scaled(self, lam):
        """(x', t, lam xi', lam^2 tau)."""
        return BoundaryPoint(self.xp, lam * self.xip, lam**2 * self.tau, self.t)


@dataclass(frozen=True)
class BoundaryClass:
    kind: str  # Elliptic | Hyperbolic | Diffractive | Gliding | HigherOrder | Undetermined
    gap: float = 0.0  # r0 + tau
    xi1_plus: Optional[float] = None
    k: Optional[int] = None
    derivative_value: Optional[float] = None
    k_max_exceeded: Optional[int] = None

    @property
    def glancing(self):
        return self.kind in ("Diffractive", "Gliding", "HigherOrder", "Undetermined")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


class Chart:
    """Common machinery; subclasses provide r(x1, xp, xip)."""

    dim_tangent = 1
    fd_step = 1e-3

    def r(self, x1, xp, xip):
        raise NotImplementedError

    def r0(self, xp, xip):
        return float(self.r(0.0, xp, xip))

    def dr_dx1(self, xp, xip, x1=0.0):
        val, _ = richardson_derivative(lambda s: float(self.r(s, xp, xip)), x1, self.fd_step)
        return val

    def grad_r0(self, xp, xip):
        xp = np.atleast_1d(np.asarray(xp, float))
        xip = np.atleast_1d(np.asarray(xip, float))
        m = xp.size
        gx, gxi = np.zeros(m), np.zeros(m)
        for i in range(m):
            e = np.zeros(m)
            e[i] = 1.0
            hx = self.fd_step * (1.0 + abs(xp[i]))
            hxi = self.fd_step * (1.0 + abs(xip[i]))
            gx[i], _ = richardson_derivative(lambda s: self.r0(xp + s * e, xip), 0.0, hx)
            gxi[i], _ = richardson_derivative(lambda s: self.r0(xp, xip + s * e), 0.0, hxi)
        return gx, gxi

    def hamilton_r0(self, xp, xip):
        """(dx'/ds, dxi'/ds) for the Hamilton field of r0."""
        gx, gxi = self.grad_r0(xp, xip)
        return gxi, -gx

    def r0_flow(self, xp, xip, s_span, events=None, tol=1e-11):
        m = np.atleast_1d(xp).size

        def rhs(s, y):
            dx, dxi = self.hamilton_r0(y[:m], y[m:])
            return np.concatenate([dx, dxi])

        y0 = np.concatenate([np.atleast_1d(xp), np.atleast_1d(xip)]).astype(float)
        return solve_ivp(rhs, s_span, y0, method="DOP853", rtol=tol, atol=tol * 1e-2,
                         dense_output=True, events=events)


class SyntheticChart(Chart):
    """Half-space chart x = (x1, x') with a user-supplied tangential symbol r.

    Optional analytic callables: dr_dx1(x1, xp, xip), dr0_dxp(xp, xip),
    dr0_dxip(xp, xip).  Missing ones fall back to finite differences.
    """

    def __init__(self, r, dim_tangent=1, dr_dx1=None, dr0_dxp=None, dr0_dxip=None,
                 name="synthetic"):
        self._r = r
        self.dim_tangent = dim_tangent
        self._dr_dx1 = dr_dx1
        self._dr0_dxp = dr0_dxp
        self._dr0_dxip = dr0_dxip
        self.name = name

    def r(self, x1, xp, xip):
        return self._r(x1, np.atleast_1d(np.asarray(xp, float)),
                       np.atleast_1d(np.asarray(xip, float)))

    def dr_dx1(self, xp, xip, x1=0.0):
        if self._dr_dx1 is not None:
            return float(self._dr_dx1(x1, np.atleast_1d(xp), np.atleast_1d(xip)))
        return super().dr_dx1(xp, xip, x1)

    def grad_r0(self, xp, xip):
        if self._dr0_dxp is not None and self._dr0_dxip is not None:
            xp, xip = np.atleast_1d(xp), np.atleast_1d(xip)
            return (np.atleast_1d(self._dr0_dxp(xp, xip)).astype(float),
                    np.atleast_1d(self._dr0_dxip(xp, xip)).astype(float))
        return super().grad_r0(xp, xip)

    def to_chart(self, x):
        x = np.asarray(x, float)
        return float(x[0]), x[1:].copy()

    def from_chart(self, x1, xp):
        return np.concatenate([[x1], np.atleast_1d(xp)])

    def jacobian(self, x1, xp):
        return np.eye(self.dim_tangent + 1)

    def p_chart(self, x1, xp, xi1, xip):
        return xi1**2 + float(self.r(x1, xp, xip))


def synthetic_world(tangential_metric, dim=2, name="synthetic", analytic=None):
    """Half-space {x1 >= 0} with p = xi1^2 + xi'.R(x1, x') xi'.

    Returns (field, obstacle, chart) so that the generalized flow can run in
    chart coordinates directly; the obstacle carries the chart.
    """
    from .symbols import Obstacle, SymbolField, _const_potential

    m = dim - 1

    def a(x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1] + (dim, dim))
        out[..., 0, 0] = 1.0
        out[..., 1:, 1:] = tangential_metric(x[..., 0], x[..., 1:])
        return out

    def r(x1, xp, xip):
        R = np.asarray(tangential_metric(np.asarray(x1, float), np.asarray(xp, float)))
        return float(xip @ R.reshape(m, m) @ xip)

    analytic = analytic or {}
    chart = SyntheticChart(r, m, name=name, **analytic)
    V, gV = _const_potential(1.0)
    field = SymbolField(dim, a, V, name=name)
    e1 = np.zeros(dim)
    e1[0] = 1.0
    obstacle = Obstacle(lambda x: np.asarray(x, float)[..., 0],
                        lambda x: np.broadcast_to(e1, np.shape(x)).copy(),
                        1.0, lambda x: np.zeros(np.shape(x) + (dim,)), name=name,
                        params={"dim": dim, "feature": 1.0, "chart": chart})
    return field, obstacle, chart


def half_space(metric_scale=1.0):
    """Flat half-space x1 > 0: r = c xi'^2."""
    c = float(metric_scale)
    return SyntheticChart(lambda x1, xp, xip: c * float(xip @ xip),
                          dr_dx1=lambda x1, xp, xip: 0.0,
                          dr0_dxp=lambda xp, xip: np.zeros_like(xp),
                          dr0_dxip=lambda xp, xip: 2.0 * c * xip, name="half_space")


class GeodesicChart(Chart):
    """Normal geodesic coordinates near a planar boundary curve.

    x' is the metric arclength along the boundary measured from the base
    point, x1 the metric distance along the normal geodesic.  For the flat
    metric the normal geodesics are straight lines and everything is closed
    form; otherwise geodesics are integrated and the Jacobian is obtained by
    central differences.
    """

    def __init__(self, field, obstacle, base_point, span=None, tube_width=None, tol=1e-12):
        if field.dim != 2:
            raise ValueError("geometric charts are implemented for d = 2 only")
        self.field = field
        self.obstacle = obstacle.component(base_point)
        _, foot, _ = project_to_boundary(self.obstacle, base_point)
        self.base = foot
        self.tube_width = obstacle.tube_width if tube_width is None else tube_width
        self.span = 2.0 * np.pi * obstacle.R0 if span is None else float(span)
        self.tol = tol
        self.flat = bool(field.flat)
        ob = self.obstacle
        ainv = lambda y: np.linalg.inv(field.metric(y))

        def rhs(s, y):
            g = ob.grad_b(y)
            t = np.array([-g[1], g[0]])
            t = t / np.sqrt(t @ ainv(y) @ t)
            # pull back towards the level set to stop drift
            return t - float(ob.b(y)) * g / float(g @ g)

        fw = solve_ivp(rhs, (0.0, self.span), foot, method="DOP853", rtol=tol, atol=tol,
                       dense_output=True)
        bw = solve_ivp(rhs, (0.0, -self.span), foot, method="DOP853", rtol=tol, atol=tol,
                       dense_output=True)
        self._fw, self._bw = fw.sol, bw.sol
        self._table_s = np.linspace(-self.span, self.span, 4001)
        self._table_y = np.array([self.Y(s) for s in self._table_s])

    # boundary curve ------------------------------------------------------
    def Y(self, s):
        s = float(s)
        if abs(s) > self.span * (1 + 1e-12):
            raise ChartDomainExceeded(f"x' = {s:.4g} outside the chart span", witness=s)
        return np.asarray(self._fw(s) if s >= 0 else self._bw(s), float)

    def _frame(self, s):
        """(y, unit normal covector conormal n, metric unit normal vector nu, unit tangent T)."""
        y = self.Y(s)
        g = self.obstacle.grad_b(y)
        A = self.field.metric(y)
        nu = A @ g / np.sqrt(g @ A @ g)
        t = np.array([-g[1], g[0]])
        T = t / np.sqrt(t @ np.linalg.solve(A, t))
        return y, g, nu, T

    # coordinates ---------------------------------------------------------
    def _check(self, x1):
        if x1 > self.tube_width or x1 < -self.tube_width:
            raise ChartDomainExceeded(f"x1 = {x1:.4g} outside the tube", witness=x1)

    def from_chart(self, x1, xp):
        x1 = float(x1)
        s = float(np.atleast_1d(xp)[0])
        self._check(x1)
        y, g, nu, T = self._frame(s)
        if self.flat:
            return y + x1 * nu
        if x1 == 0.0:
            return y
        A = self.field.metric(y)
        xi0 = g / (2.0 * np.sqrt(g @ A @ g))
        f = self.field

        def rhs(_, z):
            dx, dxi = f.hamilton_vector(z[:2], z[2:])
            return np.concatenate([dx, dxi])

        sol = solve_ivp(rhs, (0.0, x1), np.concatenate([y, xi0]), method="DOP853",
                        rtol=self.tol, atol=self.tol)
        return sol.y[:2, -1]

    def jacobian(self, x1, xp):
        """J = d x / d(x1, x') as a 2x2 matrix (columns: d/dx1, d/dx')."""
        s = float(np.atleast_1d(xp)[0])
        if self.flat:
            y, g, nu, T = self._frame(s)
            H = self.obstacle.hess_b(y)
            n = g / np.linalg.norm(g)
            dnu = (np.eye(2) - np.outer(n, n)) @ H @ T / np.linalg.norm(g)
            return np.column_stack([nu, T + x1 * dnu])
        h = 1e-5
        c1 = (self.from_chart(x1 + h, [s]) - self.from_chart(x1 - h, [s])) / (2 * h)
        c2 = (self.from_chart(x1, [s + h]) - self.from_chart(x1, [s - h])) / (2 * h)
        return np.column_stack([c1, c2])

    def to_chart(self, x, max_iter=50):
        x = np.asarray(x, float)
        dist, foot, _ = project_to_boundary(self.obstacle, x)
        i = int(np.argmin(np.sum((self._table_y - foot) ** 2, axis=1)))
        s = self._table_s[i]
        for _ in range(max_iter):
            y, g, nu, T = self._frame(s)
            ds = float(T @ (foot - y)) / float(T @ T)
            s += ds
            if abs(ds) < 1e-14 * (1 + abs(s)):
                break
        x1 = dist
        if not self.flat:
            z = np.array([x1, s])
            for _ in range(max_iter):
                F = self.from_chart(z[0], [z[1]]) - x
                if np.linalg.norm(F) < 1e-12:
                    break
                z = z - np.linalg.solve(self.jacobian(z[0], [z[1]]), F)
            x1, s = z
        self._check(x1)
        if abs(s) > self.span:
            raise ChartDomainExceeded("point outside the chart span", witness=x)
        return float(x1), np.array([s])

    # covectors -----------------------------------------------------------
    def chart_covector(self, x1, xp, xi):
        return self.jacobian(x1, xp).T @ np.asarray(xi, float)

    def world_covector(self, x1, xp, xi1, xip):
        J = self.jacobian(x1, xp)
        return np.linalg.solve(J.T, np.array([xi1, float(np.atleast_1d(xip)[0])]))

    def p_chart(self, x1, xp, xi1, xip):
        x = self.from_chart(x1, xp)
        return float(self.field.p(x, self.world_covector(x1, xp, xi1, xip)))

    def r(self, x1, xp, xip):
        return self.p_chart(x1, xp, 0.0, xip)

    def dr_dx1(self, xp, xip, x1=0.0):
        if self.flat:
            return super().dr_dx1(xp, xip, x1)
        val, _ = richardson_derivative(lambda s: float(self.r(s, xp, xip)), x1, 1e-2)
        return val

    def grad_r0(self, xp, xip):
        # r0 is quadratic in xi': d r0 / d xi' = 2 r0 / xi'
        xp = np.atleast_1d(np.asarray(xp, float))
        xip = np.atleast_1d(np.asarray(xip, float))
        m = self.r0(xp, np.ones(1))
        gx, _ = richardson_derivative(lambda s: self.r0(xp + s, np.ones(1)), 0.0,
                                      self.fd_step * (1 + abs(xp[0])))
        return gx * xip**2, 2.0 * m * xip


def build_chart(field, obstacle, boundary_point, **kw):
    return GeodesicChart(field, obstacle, boundary_point, **kw)


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------

def default_bands(zeta, band=None, band2=None):
    q = float(zeta.xip @ zeta.xip)
    if band is None:
        band = 1e-6 * (q + abs(zeta.tau))
    if band2 is None:
        band2 = 1e-6 * q
    return band, band2


def iterated_hamilton_derivative(chart, zeta, j, rel_tol=1e-4, step=None):
    """H_{r0}^j applied to (x', xi') -> dr/dx1(0, x', xi'), evaluated at zeta.

    Computed as the j-th derivative at s = 0 of f(gamma(s)), gamma the r0
    flow through (x', xi'), from a polynomial interpolant on 2m+1 equispaced
    nodes; two step sizes must agree to ``rel_tol``.
    """
    xp, xip = zeta.xp, zeta.xip
    f = lambda a, b: chart.dr_dx1(a, b)
    if j == 0:
        return float(f(xp, xip))
    m = len(xp)
    speed = float(np.linalg.norm(np.concatenate(chart.hamilton_r0(xp, xip)))) or 1.0
    if step is None:
        step = 0.05 / speed
    n_side = j + 2
    sol_f = chart.r0_flow(xp, xip, (0.0, (n_side + 1) * step)).sol
    sol_b = chart.r0_flow(xp, xip, (0.0, -(n_side + 1) * step)).sol

    def g(s):
        y = sol_f(s) if s >= 0 else sol_b(s)
        return float(f(y[:m], y[m:]))

    def estimate(hs):
        nodes = np.arange(-n_side, n_side + 1) * hs
        vals = np.array([g(s) for s in nodes])
        poly = np.polynomial.Polynomial.fit(nodes, vals, 2 * n_side, domain=[-1, 1], window=[-1, 1])
        return float(poly.deriv(j)(0.0))

    coarse, fine = estimate(step), estimate(step / 2)
    err = abs(fine - coarse)
    if err > rel_tol * max(1.0, abs(fine)):
        raise DerivativeUnstable(f"H^{j} estimates disagree: {coarse:.6g} vs {fine:.6g}",
                                 witness=zeta)
    return fine


def classify(chart, zeta, band=None, band2=None, k_max=5):
    """Elliptic/Hyperbolic by the sign of r0 + tau, glancing subtypes by the
    first nonvanishing iterated Hamilton derivative of dr/dx1."""
    band, band2 = default_bands(zeta, band, band2)
    gap = chart.r0(zeta.xp, zeta.xip) + zeta.tau
    if gap > band:
        return BoundaryClass("Elliptic", gap)
    if gap < -band:
        return BoundaryClass("Hyperbolic", gap, xi1_plus=float(np.sqrt(-gap)))
    f0 = chart.dr_dx1(zeta.xp, zeta.xip)
    if f0 < -band2:
        return BoundaryClass("Diffractive", gap, derivative_value=float(f0))
    if f0 > band2:
        return BoundaryClass("Gliding", gap, derivative_value=float(f0))
    qn = float(np.linalg.norm(zeta.xip)) or 1.0
    for j in range(1, k_max - 1):
        val = iterated_hamilton_derivative(chart, zeta, j)
        if abs(val) > band2 * qn**j:
            return BoundaryClass("HigherOrder", gap, k=j + 2, derivative_value=float(val))
    return BoundaryClass("Undetermined", gap, k_max_exceeded=k_max)


def hyperbolic_roots(chart, zeta):
    gap = chart.r0(zeta.xp, zeta.xip) + zeta.tau
    if gap >= 0:
        raise NotHyperbolic(f"r0 + tau = {gap:.3e} >= 0", witness=zeta)
    root = float(np.sqrt(-gap))
    return root, -root


# --------------------------------------------------------------------------
# World-coordinate helpers used by the generalized flow
# --------------------------------------------------------------------------

def normal_component(field, obstacle, x, xi):
    """xi1 = n.a xi / sqrt(n.a n) with n = grad b; positive means outgoing."""
    ob = obstacle.component(x)
    n = ob.grad_b(x)
    A = field.metric(x)
    return float(n @ A @ xi) / np.sqrt(float(n @ A @ n))


def reflect(field, obstacle, x, xi):
    """Specular reflection xi - 2 (n.a xi)/(n.a n) n, which flips xi1 and keeps p."""
    ob = obstacle.component(x)
    n = ob.grad_b(x)
    A = field.metric(x)
    return np.asarray(xi, float) - 2.0 * float(n @ A @ xi) / float(n @ A @ n) * n


def boundary_zeta(chart, x, xi, tau=None, t=0.0):
    """Chart coordinates (x1, zeta, xi1) of a world phase point near the boundary."""
    x1, xp = chart.to_chart(x)
    xi_c = chart.chart_covector(x1, xp, xi)
    if tau is None:
        tau = -float(chart.field.p(x, xi))
    return x1, BoundaryPoint(xp, xi_c[1:], tau, t), float(xi_c[0])
