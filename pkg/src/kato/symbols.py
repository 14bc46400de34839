"""Problem data: the obstacle, the metric a^{jk}, the potential V.

Everything here is vectorised over leading axes: a point array of shape
(..., d) gives metrics of shape (..., d, d), metric derivatives of shape
(..., d, d, d) with the differentiation index last, and scalar fields of
shape (...).
"""
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import InsideObstacle, NonFiniteField, ProjectionDiverged


def japanese(v):
    """<v> = sqrt(1 + |v|^2) over the last axis."""
    v = np.asarray(v, dtype=float)
    return np.sqrt(1.0 + np.sum(v * v, axis=-1))


def _central_jacobian(fun, x, step_scale=1e-5):
    """Central-difference derivative of ``fun`` with step <x>*step_scale.

    Appends the differentiation axis last.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    step = step_scale * japanese(x)
    cols = []
    for l in range(d):
        e = np.zeros(d)
        e[l] = 1.0
        shift = step[..., None] * e
        diff = (np.asarray(fun(x + shift)) - np.asarray(fun(x - shift)))
        extra = diff.ndim - step.ndim
        cols.append(diff / (2.0 * step).reshape(step.shape + (1,) * extra))
    return np.stack(cols, axis=-1)


# --------------------------------------------------------------------------
# Obstacles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Obstacle:
    """K = {b <= 0}, compact, with smooth boundary {b = 0}; K lies in |x| <= R0."""

    level: Callable
    grad: Callable
    R0: float
    hess: Optional[Callable] = None
    name: str = "obstacle"
    parts: tuple = ()
    tube_width: float = 0.5
    params: dict = dc_field(default_factory=dict)

    @property
    def dim(self):
        return int(self.params.get("dim", 2))

    def b(self, x):
        return self.level(np.asarray(x, dtype=float))

    def grad_b(self, x):
        return self.grad(np.asarray(x, dtype=float))

    def hess_b(self, x):
        if self.hess is not None:
            return self.hess(np.asarray(x, dtype=float))
        return _central_jacobian(self.grad, x, 1e-6)

    def component(self, x):
        """The part whose level function is smallest at x (self if simple)."""
        if not self.parts:
            return self
        vals = [float(p.b(x)) for p in self.parts]
        return self.parts[int(np.argmin(vals))]

    def inside(self, x, tol=0.0):
        return self.b(x) <= tol


def disk(radius=1.0, center=(0.0, 0.0)):
    c = np.asarray(center, dtype=float)
    rho = float(radius)

    def level(x):
        y = x - c
        return (np.sum(y * y, axis=-1) - rho**2) / (2.0 * rho)

    def grad(x):
        return (x - c) / rho

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(c.size) / rho, x.shape + (c.size,)).copy()

    R0 = float(np.linalg.norm(c) + rho)
    return Obstacle(level, grad, R0, hess, name="disk",
                    params={"dim": c.size, "radius": rho, "center": c.tolist(), "feature": rho})


def cavity(radius=1.0):
    """Domain inside the circle |x| < radius; the level function is positive
    inside, so rays reflect off the circle from within."""
    rho = float(radius)

    def level(x):
        return (rho**2 - np.sum(x * x, axis=-1)) / (2.0 * rho)

    def grad(x):
        return -x / rho

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-np.eye(x.shape[-1]) / rho, x.shape + (x.shape[-1],)).copy()

    return Obstacle(level, grad, rho, hess, name="cavity",
                    params={"dim": 2, "radius": rho, "feature": rho})


def ellipse(semi_x=2.0, semi_y=1.0):
    A, B = float(semi_x), float(semi_y)
    w = np.array([1.0 / A**2, 1.0 / B**2])

    def level(x):
        return 0.5 * (np.sum(w * x * x, axis=-1) - 1.0)

    def grad(x):
        return w * x

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.diag(w), x.shape + (2,)).copy()

    return Obstacle(level, grad, max(A, B), hess, name="ellipse",
                    params={"dim": 2, "semi_x": A, "semi_y": B, "feature": min(A, B)**2 / max(A, B)})


def two_disks(separation=4.0, radius=1.0):
    """Disks of the given radius centred at (+-separation/2, 0)."""
    left = disk(radius, (-separation / 2.0, 0.0))
    right = disk(radius, (separation / 2.0, 0.0))

    def level(x):
        return np.minimum(left.level(x), right.level(x))

    def grad(x):
        use_left = left.level(x) <= right.level(x)
        return np.where(np.asarray(use_left)[..., None], left.grad(x), right.grad(x))

    def hess(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(2) / radius, x.shape + (2,)).copy()

    return Obstacle(level, grad, separation / 2.0 + radius, hess,
                    name="two_disks", parts=(left, right),
                    params={"dim": 2, "separation": separation, "radius": radius,
                            "feature": radius})


def kidney(dent=0.3, sharpness=6.0, angle=0.0):
    """Unit disk with a smooth inward dent centred at polar angle ``angle``.

    Boundary rho(phi) = 1 - dent*exp(sharpness*(cos(phi-angle) - 1)); the dent
    makes the boundary concave as seen from the exterior, which produces
    gliding points and inflection (third-order contact) points.
    """
    beta, kap, ang = float(dent), float(sharpness), float(angle)

    def rho(phi, deriv=0):
        g = np.exp(kap * (np.cos(phi - ang) - 1.0))
        if deriv == 0:
            return 1.0 - beta * g
        s = np.sin(phi - ang)
        if deriv == 1:
            return beta * kap * s * g
        c = np.cos(phi - ang)
        return beta * kap * (c - kap * s * s) * g

    def level(x):
        r = np.linalg.norm(x, axis=-1)
        phi = np.arctan2(x[..., 1], x[..., 0])
        return r - rho(phi)

    def grad(x):
        r = np.linalg.norm(x, axis=-1)
        r = np.where(r > 0, r, 1e-300)
        phi = np.arctan2(x[..., 1], x[..., 0])
        perp = np.stack([-x[..., 1], x[..., 0]], axis=-1) / (r * r)[..., None]
        return x / r[..., None] - rho(phi, 1)[..., None] * perp

    return Obstacle(level, grad, 1.0, None, name="kidney",
                    params={"dim": 2, "dent": beta, "sharpness": kap, "angle": ang,
                            "feature": 1.0 / np.sqrt(kap)})


def project_to_boundary(obstacle, x, tol=1e-12, max_iter=60):
    """Nearest boundary point of ``obstacle`` to an exterior point x.

    Returns (distance, foot, unit_normal); the normal points into the exterior.
    """
    x = np.asarray(x, dtype=float)
    ob = obstacle.component(x)
    bx = float(ob.b(x))
    scale = 1.0 + float(np.linalg.norm(x))
    if bx < -tol * scale:
        raise InsideObstacle(f"b(x) = {bx:.3e} < 0", witness=x)
    y = x.copy()
    # land on the level set first
    for _ in range(max_iter):
        g = ob.grad_b(y)
        by = float(ob.b(y))
        if abs(by) <= tol * scale:
            break
        y = y - by * g / float(g @ g)
    g = ob.grad_b(y)
    mu = float((x - y) @ g) / float(g @ g)
    d = x.size
    for it in range(max_iter):
        g = ob.grad_b(y)
        F = np.concatenate([y - x + mu * g, [float(ob.b(y))]])
        if np.linalg.norm(F) <= tol * scale:
            break
        J = np.zeros((d + 1, d + 1))
        J[:d, :d] = np.eye(d) + mu * ob.hess_b(y)
        J[:d, d] = g
        J[d, :d] = g
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise ProjectionDiverged("singular Lagrange system", witness=x) from exc
        y = y + step[:d]
        mu = mu + step[d]
    else:
        raise ProjectionDiverged(f"Newton did not converge in {max_iter} steps", witness=x)
    g = ob.grad_b(y)
    normal = g / np.linalg.norm(g)
    return float(np.linalg.norm(x - y)), y, normal


# --------------------------------------------------------------------------
# Metric and potential
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SymbolField:
    """p(x, xi) = xi . a(x) xi together with the potential V."""

    dim: int
    a: Callable
    V: Callable
    c: float = 1.0
    R0: float = 1.0
    R1: Optional[float] = None
    grad_a: Optional[Callable] = None
    grad_V: Optional[Callable] = None
    name: str = "field"
    flat: bool = False
    params: dict = dc_field(default_factory=dict)

    @property
    def R1_value(self):
        return 2.0 * self.R0 if self.R1 is None else float(self.R1)

    def metric(self, x):
        return np.asarray(self.a(np.asarray(x, dtype=float)), dtype=float)

    def dmetric(self, x):
        if self.grad_a is not None:
            return np.asarray(self.grad_a(np.asarray(x, dtype=float)), dtype=float)
        return _central_jacobian(self.metric, x)

    def potential(self, x):
        return np.asarray(self.V(np.asarray(x, dtype=float)), dtype=float)

    def dpotential(self, x):
        if self.grad_V is not None:
            return np.asarray(self.grad_V(np.asarray(x, dtype=float)), dtype=float)
        return _central_jacobian(self.potential, x)

    def p(self, x, xi):
        A = self.metric(x)
        xi = np.asarray(xi, dtype=float)
        return np.einsum("...j,...jk,...k->...", xi, A, xi)

    def dp_dxi(self, x, xi):
        return 2.0 * np.einsum("...jk,...k->...j", self.metric(x), np.asarray(xi, float))

    def dp_dx(self, x, xi):
        xi = np.asarray(xi, dtype=float)
        return np.einsum("...j,...jkl,...k->...l", xi, self.dmetric(x), xi)

    def hamilton_vector(self, x, xi):
        """(dx/ds, dxi/ds) of the flow of p."""
        return self.dp_dxi(x, xi), -self.dp_dx(x, xi)


def _const_potential(value):
    return (lambda x: np.full(np.shape(x)[:-1], float(value)),
            lambda x: np.zeros(np.shape(x)))


def _quadratic_potential():
    return (lambda x: 1.0 + np.sum(np.asarray(x) ** 2, axis=-1),
            lambda x: 2.0 * np.asarray(x, dtype=float))


def flat(dim=2, V=None, grad_V=None, R0=1.0, R1=None, c=1.0):
    """a = Id; V defaults to the constant 1."""
    if V is None:
        V, grad_V = _const_potential(1.0)
    eye = np.eye(dim)

    def a(x):
        return np.broadcast_to(eye, np.shape(x)[:-1] + (dim, dim)).copy()

    def grad_a(x):
        return np.zeros(np.shape(x)[:-1] + (dim, dim, dim))

    return SymbolField(dim, a, V, c=c, R0=R0, R1=R1, grad_a=grad_a, grad_V=grad_V,
                       name="flat", flat=True, params={"metric": "flat"})


def diagonal(diag, V=None, grad_V=None, R0=1.0, R1=None, c=1.0):
    """Constant diagonal metric diag(diag)."""
    diag = np.asarray(diag, dtype=float)
    dim = diag.size
    if V is None:
        V, grad_V = _const_potential(1.0)
    A = np.diag(diag)

    def a(x):
        return np.broadcast_to(A, np.shape(x)[:-1] + (dim, dim)).copy()

    def grad_a(x):
        return np.zeros(np.shape(x)[:-1] + (dim, dim, dim))

    return SymbolField(dim, a, V, c=c, R0=R0, R1=R1, grad_a=grad_a, grad_V=grad_V,
                       name="diagonal", params={"metric": "diagonal", "diag": diag.tolist()})


def conformal_bump(dim=2, amplitude=0.1, width=1.0, V=None, grad_V=None, R0=1.0,
                   R1=None, c=1.0):
    """a(x) = (1 + amplitude*exp(-|x|^2/width^2)) Id."""
    A0, w2 = float(amplitude), float(width) ** 2
    eye = np.eye(dim)
    if V is None:
        V, grad_V = _const_potential(1.0)

    def factor(x):
        return 1.0 + A0 * np.exp(-np.sum(np.asarray(x) ** 2, axis=-1) / w2)

    def a(x):
        return factor(x)[..., None, None] * eye

    def grad_a(x):
        x = np.asarray(x, dtype=float)
        g = -2.0 * A0 / w2 * np.exp(-np.sum(x * x, axis=-1) / w2)[..., None] * x
        return eye[..., None] * g[..., None, None, :]

    return SymbolField(dim, a, V, c=c, R0=R0, R1=R1, grad_a=grad_a, grad_V=grad_V,
                       name="conformal_bump",
                       params={"metric": "conformal_bump", "amplitude": A0, "width": width})


def potential(kind="constant", value=1.0):
    """(V, grad_V) for the potential kinds understood by scenario files."""
    if kind == "constant":
        return _const_potential(value)
    if kind == "quadratic":
        return _quadratic_potential()
    raise ValueError(f"unknown potential kind {kind!r}")


# --------------------------------------------------------------------------
# Assumption checks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSpec:
    """Points on concentric shells, deterministic given ``seed``."""

    dim: int = 2
    radii: tuple = (2.0, 4.0, 8.0, 16.0)
    per_shell: int = 64
    seed: int = 0

    @classmethod
    def shells(cls, R0, dim=2, per_shell=64, seed=0):
        return cls(dim, tuple(R0 * f for f in (2, 4, 8, 16)), per_shell, seed)

    def points(self):
        rng = np.random.default_rng(self.seed)
        dirs = rng.normal(size=(self.per_shell, self.dim))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        return np.stack([r * dirs for r in self.radii])


@dataclass
class AssumptionReport:
    quantity: str
    samples: int
    margin: float
    passed: bool
    witness: Optional[np.ndarray] = None
    constant: Optional[float] = None

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f" C={self.constant:.4g}" if self.constant is not None else ""
        return f"{status} {self.quantity}: margin={self.margin:.3e} over {self.samples} samples{extra}"


def _as_points(samples, dim):
    if isinstance(samples, SampleSpec):
        pts = samples.points()
    else:
        pts = np.asarray(samples, dtype=float)
    pts = pts.reshape(-1, dim)
    if pts.shape[0] == 0:
        raise ValueError("empty sample set")
    return pts


def _require_finite(arr, pts, what):
    arr = np.asarray(arr)
    bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
    if bad.any():
        raise NonFiniteField(f"{what} is not finite", witness=pts[np.argmax(bad)])


def check_ellipticity(field, samples, tolerance=0.0):
    """margin = min_x (lambda_min(a(x)) - c) + tolerance; pass iff margin >= 0."""
    pts = _as_points(samples, field.dim)
    A = field.metric(pts)
    _require_finite(A, pts, "a(x)")
    lam = np.linalg.eigvalsh(0.5 * (A + np.swapaxes(A, -1, -2)))[:, 0]
    slack = lam - field.c
    i = int(np.argmin(slack))
    margin = float(slack[i]) + tolerance
    return AssumptionReport("ellipticity", len(pts), margin, margin >= 0, pts[i])


def _derivative_norms(fun, dfun, pts, max_order):
    """Max-abs norms of D^beta f for |beta| = 0..max_order, shape (orders, n)."""
    out = [np.abs(np.asarray(fun(pts)).reshape(len(pts), -1)).max(axis=1)]
    if max_order >= 1:
        d1 = np.asarray(dfun(pts))
        out.append(np.abs(d1.reshape(len(pts), -1)).max(axis=1))
    if max_order >= 2:
        d2 = _central_jacobian(dfun, pts, 1e-4)
        out.append(np.abs(d2.reshape(len(pts), -1)).max(axis=1))
    return np.array(out)


def check_symbol_class(field, weight_exponent=2.0, samples=None, max_order=2,
                       slack=2.0, decay_tol=0.1):
    """Finite-shell certificate of the symbol estimates on a and V.

    For each order k <= max_order the constant C_k is the largest ratio
    |D^k f| <x>^{k - m} seen on the innermost shell (m = 0 for a, m =
    ``weight_exponent`` for V).  Outer shells must stay below slack*C_k, and
    |x| |grad a| on the outermost shell must be below ``decay_tol``.
    """
    if max_order > 2:
        raise ValueError("max_order must be <= 2")
    if samples is None:
        samples = SampleSpec.shells(field.R0, field.dim)
    if isinstance(samples, SampleSpec):
        shells = samples.points()
    else:
        shells = np.asarray(samples, dtype=float)
        if shells.ndim == 2:
            shells = shells[None]
    n_shell, per, d = shells.shape
    pts = shells.reshape(-1, d)
    A = field.metric(pts)
    _require_finite(A, pts, "a(x)")
    Vv = field.potential(pts)
    _require_finite(Vv.reshape(len(pts), -1), pts, "V(x)")
    jx = japanese(pts)
    orders = np.arange(max_order + 1)[:, None]
    ratios = {
        "a": _derivative_norms(field.metric, field.dmetric, pts, max_order) * jx**orders,
        "V": _derivative_norms(field.potential, field.dpotential, pts, max_order)
        * jx ** (orders - weight_exponent),
    }
    atol = 1e-9
    margin, witness, constant = np.inf, None, 0.0
    for name, rat in ratios.items():
        _require_finite(rat.T, pts, f"derivatives of {name}")
        rat = rat.reshape(max_order + 1, n_shell, per)
        C = rat[:, 0, :].max(axis=1)
        constant = max(constant, float(C[0]))
        bound = slack * C[:, None, None] + atol
        rel = (bound - rat) / bound
        k = np.unravel_index(np.argmin(rel), rel.shape)
        if rel[k] < margin:
            margin = float(rel[k])
            witness = shells[k[1], k[2]]
    outer = shells[-1]
    decay = np.linalg.norm(outer, axis=-1) * np.abs(
        field.dmetric(outer).reshape(per, -1)).max(axis=1)
    dmargin = (decay_tol - decay) / decay_tol
    j = int(np.argmin(dmargin))
    if dmargin[j] < margin:
        margin, witness = float(dmargin[j]), outer[j]
    return AssumptionReport("symbol_class", len(pts), margin, margin >= 0, witness, constant)
