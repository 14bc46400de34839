"""Schrodinger evolution u(t) = e^{itP} u0 and smoothing quotients.

Time stepping is Crank-Nicolson (the Cayley transform of P), which is exactly
unitary in exact arithmetic; the factorisation of I - i dt P / 2 is computed
once per run.  For the disk exterior the exact evolution is also available
through :mod:`kato.discrete.polar`, which the smoothing scan uses for its
oracle-grade path.
"""
from dataclasses import dataclass, field as dc_field
from typing import Optional
import json

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from .discrete.calculus import _spectral
from .discrete.operator import DiscreteOperator
from .discrete import polar as PL
from .errors import SolveFailed, ZeroData
from .smooth import DyadicPartition, falling, rising
from .symbols import project_to_boundary


@dataclass
class WaveState:
    values: np.ndarray
    t: float = 0.0

    @property
    def norm(self):
        return float(np.linalg.norm(self.values))

    def normalized(self):
        n = self.norm
        if n == 0:
            raise ZeroData("cannot normalise the zero state")
        return WaveState(self.values / n, self.t)


@dataclass
class WavepacketFamily:
    """u0(h) = e^{i x.xi0/h} exp(-|x - x0|^2 / (2h)), tapered to vanish near
    the obstacle, normalised on the grid it is sampled on.

    Under e^{itP} the packet travels with velocity -2 xi0 / h, so the default
    xi0 = (-1, 0) sends it from x0 towards the unit disk.
    """

    x0: tuple = (-3.0, 0.3)
    xi0: tuple = (-1.0, 0.0)
    h_list: tuple = (1 / 8, 1 / 16, 1 / 32, 1 / 64)
    taper: Optional[tuple] = (1.0, 1.25)  # radial rise from 0 to 1

    def __post_init__(self):
        xi = np.asarray(self.xi0, float)
        self.xi0 = tuple(xi / np.linalg.norm(xi))

    def profile(self, h):
        x0 = np.asarray(self.x0, float)
        xi0 = np.asarray(self.xi0, float)

        def f(x):
            x = np.asarray(x, float)
            d = x - x0
            g = np.exp(-np.sum(d * d, axis=-1) / (2 * h) + 1j * (x @ xi0) / h)
            if self.taper is not None:
                g = g * rising(np.linalg.norm(x, axis=-1), *self.taper)
            return g

        return f

    def member(self, P, h):
        u = self.profile(h)(P.coords)
        return WaveState(u).normalized()

    def obstacle_mass(self, h, obstacle, n=801, half_width=None):
        """Mass of the untapered packet inside the obstacle (relative)."""
        half = half_width or 8 * np.sqrt(h)
        x0 = np.asarray(self.x0, float)
        s = np.linspace(-half, half, n)
        X = np.stack(np.meshgrid(x0[0] + s, x0[1] + s, indexing="ij"), -1)
        w = np.exp(-np.sum((X - x0) ** 2, axis=-1) / h)
        return float(w[obstacle.b(X) <= 0].sum() / w.sum())


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_snap, n)
    dt: float
    norm_drift: float
    energy_drift: float
    P: DiscreteOperator = dc_field(default=None, repr=False)

    def __len__(self):
        return len(self.times)

    def state(self, i):
        return WaveState(self.states[i], float(self.times[i]))


def propagate(P, u0, T, dt, every=4, keep=True, observe=None):
    """Crank-Nicolson steps (I - i dt P/2) u_{n+1} = (I + i dt P/2) u_n.

    Snapshots are stored every ``every`` steps (and at T).  ``observe(t, u)``
    is called on each snapshot when given.
    """
    u = np.asarray(u0.values if isinstance(u0, WaveState) else u0, dtype=complex).copy()
    n_steps = int(round(T / dt))
    if n_steps < 1:
        raise ValueError("T must be at least one step")
    A = P.matrix if isinstance(P, DiscreteOperator) else sp.csr_matrix(P)
    eye = sp.identity(A.shape[0], format="csc")
    lhs = (eye - 0.5j * dt * A).tocsc()
    rhs = (eye + 0.5j * dt * A).tocsr()
    try:
        lu = splu(lhs)
    except RuntimeError as exc:
        raise SolveFailed(str(exc)) from exc
    n0 = np.linalg.norm(u)
    e0 = float(np.real(np.vdot(u, A @ u)))
    times, snaps = [0.0], [u.copy()] if keep else []
    if observe:
        observe(0.0, u)
    for k in range(1, n_steps + 1):
        u = lu.solve(rhs @ u)
        if k % every == 0 or k == n_steps:
            if not np.all(np.isfinite(u)):
                raise SolveFailed(f"non-finite state at step {k}")
            t = k * dt
            times.append(t)
            if keep:
                snaps.append(u.copy())
            if observe:
                observe(t, u)
    drift = abs(np.linalg.norm(u) - n0) / n0 if n0 > 0 else 0.0
    e1 = float(np.real(np.vdot(u, A @ u)))
    edrift = abs(e1 - e0) / abs(e0) if e0 else 0.0
    states = np.array(snaps) if keep else u[None, :]
    return Trajectory(np.array(times), states, dt, float(drift), float(edrift), P)


def eigen_evolve(P, u0, t):
    """Oracle e^{itP} u0 from the full eigendecomposition."""
    sd = _spectral(P)
    return sd.apply(lambda lam: np.exp(1j * t * lam), np.asarray(u0, dtype=complex))


def cayley_phase(lam, dt):
    """Phase per step of Crank-Nicolson on the eigenvalue lam."""
    return 2.0 * np.arctan(0.5 * dt * lam)


def _trapezoid(vals, times):
    return float(np.trapezoid(vals, times))


def smoothing_quotient(P, u0, chi, T, dt, s=0.0, every=4):
    """int_0^T ||chi Lambda^{s+1/2} u(t)||^2 dt / ||Lambda^s u0||^2 (trapezoid on snapshots)."""
    v = np.asarray(u0.values if isinstance(u0, WaveState) else u0, dtype=complex)
    if np.linalg.norm(v) == 0:
        raise ZeroData("zero initial data")
    sd = _spectral(P)
    chi = np.asarray(chi, float)
    denom = np.linalg.norm(sd.apply(lambda lam: lam ** (0.5 * s), v)) ** 2
    traj = propagate(P, v, T, dt, every=every)
    Ls = sd.apply(lambda lam: lam ** (0.5 * (s + 0.5)), traj.states.T)
    vals = np.linalg.norm(chi[:, None] * Ls, axis=0) ** 2
    return _trapezoid(vals, traj.times) / denom


def radial_cut(inner, outer):
    return lambda r: falling(np.asarray(r, float), inner, outer)


@dataclass
class SmoothingRow:
    h: float
    q_quarter: float
    q_filtered: float
    T_eff: float
    band_mass: float

    @property
    def ratio(self):
        return self.q_quarter / self.q_filtered if self.q_filtered > 0 else np.nan


@dataclass
class SmoothingScan:
    rows: list

    @property
    def q_filtered(self):
        return np.array([r.q_filtered for r in self.rows])

    @property
    def ratios(self):
        return np.array([r.ratio for r in self.rows])

    @property
    def spread(self):
        """max_h Q(h) / min_h Q(h) for the filtered quotient."""
        q = self.q_filtered
        return float(q.max() / q.min()) if q.min() > 0 else np.inf

    def to_dict(self):
        return {"rows": [dict(h=r.h, q_quarter=r.q_quarter, q_filtered=r.q_filtered,
                              ratio=r.ratio, T_eff=r.T_eff,
                              band_mass=r.band_mass) for r in self.rows],
                "spread": self.spread}

    def to_csv(self, path):
        np.savetxt(path, np.array([[r.h, r.q_quarter, r.q_filtered, r.ratio, r.T_eff, r.band_mass]
                                   for r in self.rows]), delimiter=",",
                   header="h,q_quarter,q_filtered,ratio,T_eff,band_mass", comments="")


def _polar_row(op, family, h, chi0, chi1, theta, T, n_phi=None):
    lo, hi = 0.5 / h**2, 2.0 / h**2
    op = op.for_band(hi)
    PL.require_band(op, lo, hi, None)
    f = family.profile(h)
    if n_phi is None:
        reach = np.linalg.norm(family.x0) + 10 * np.sqrt(h)
        n_phi = int(2 ** np.ceil(np.log2(3 * reach / h + 64)))
    m, w = op.decompose(f, n_phi)
    m, w = PL.significant_modes(m, w)
    norm2 = op.norm2(w)
    # no reflection from the outer wall reaches supp chi1 before T_eff
    vmax = 2.0 * np.sqrt(hi)
    r1 = _support_radius(chi1)
    T_eff = min(T, (2 * op.R_out - r1 - np.linalg.norm(family.x0)) / vmax)
    filt31 = lambda lam: theta(h * h * lam) * lam**0.25
    filt35 = lambda lam: h**-0.5 * (h * h * lam) ** 0.25 * theta(h * h * lam)
    (q_quarter, q_filtered), mass = PL.filtered_energy_integrals(
        op, m, w, [(chi0, filt31), (chi1, filt35)], lo, hi, T_eff)
    return SmoothingRow(h, q_quarter / norm2, q_filtered / norm2, T_eff, mass)


def _support_radius(chi, r_max=100.0):
    r = np.linspace(0, r_max, 20001)
    v = chi(r)
    nz = np.flatnonzero(v > 0)
    return float(r[nz[-1]]) if nz.size else 0.0


def filtered_smoothing_scan(P, family, chi0, chi1, theta=None, T=0.5, dt=None, every=4,
                            jobs=1):
    """Per-h quotients int_0^T ||chi0 theta(h^2P) P^{1/4} u||^2 / ||u0||^2 and
    int_0^T ||chi1 h^{-1/2} theta1(h^2P) u||^2 / ||u0||^2, theta1(t) = t^{1/4} theta(t).

    ``P`` is either a PolarExterior (exact evolution, radial cutoffs as
    functions of r) or a DiscreteOperator with full spectral data (Crank-
    Nicolson evolution, cutoffs as grid vectors).
    """
    theta = theta or DyadicPartition().theta
    rows = []
    if isinstance(P, PL.PolarExterior):
        for h in family.h_list:
            rows.append(_polar_row(P, family, h, chi0, chi1, theta, T))
        return SmoothingScan(rows)
    sd = _spectral(P)
    chi0 = np.asarray(chi0, float)
    chi1 = np.asarray(chi1, float)
    for h in family.h_list:
        u0 = family.member(P, h).values
        band = theta(h * h * sd.values) != 0
        lam_top = sd.values[band].max() if band.any() else sd.lam_max
        step = dt or 0.5 / lam_top
        traj = propagate(P, u0, T, step, every=every)
        c = sd.vectors.T @ traj.states.T
        F31 = sd.vectors @ ((theta(h * h * sd.values) * sd.values**0.25)[:, None] * c)
        F35 = sd.vectors @ ((h**-0.5 * (h * h * sd.values) ** 0.25
                             * theta(h * h * sd.values))[:, None] * c)
        q_quarter = _trapezoid(np.linalg.norm(chi0[:, None] * F31, axis=0) ** 2, traj.times)
        q_filtered = _trapezoid(np.linalg.norm(chi1[:, None] * F35, axis=0) ** 2, traj.times)
        bm = float(np.sum(np.abs(sd.vectors[:, band].T @ u0) ** 2))
        rows.append(SmoothingRow(h, q_quarter, q_filtered, T, bm))
    return SmoothingScan(rows)


# --------------------------------------------------------------------------
# Boundary flux
# --------------------------------------------------------------------------

def boundary_samples(P, offsets=(1.5, 3.0)):
    """Boundary points next to the grid with outward (into Omega) normals and
    arc-length weights.  Points are ordered by angle about each component's
    centroid, which assumes star-shaped components."""
    mask = P.mask
    # grid unknowns with a 4-neighbour that is not an unknown but lies in the obstacle
    xs, ys = P.grid.axes()
    X = np.stack(np.meshgrid(xs, ys, indexing="ij"), -1)
    obst = P.obstacle.b(X) <= 0
    near = np.zeros_like(mask)
    near[1:] |= obst[:-1]
    near[:-1] |= obst[1:]
    near[:, 1:] |= obst[:, :-1]
    near[:, :-1] |= obst[:, 1:]
    near &= mask
    pts = X[near]
    ys_b, normals = [], []
    for x in pts:
        _, y, nrm = project_to_boundary(P.obstacle, x)
        ys_b.append(y)
        normals.append(nrm)
    Yb = np.array(ys_b)
    Nb = np.array(normals)
    parts = getattr(P.obstacle, "parts", ())
    if parts:
        comp = np.argmin(np.stack([part.b(Yb) for part in parts]), axis=0)
    else:
        comp = np.zeros(len(Yb), int)
    weights = np.zeros(len(Yb))
    order_all = []
    for c in np.unique(comp):
        idx = np.flatnonzero(comp == c)
        cen = Yb[idx].mean(axis=0)
        ang = np.arctan2(Yb[idx, 1] - cen[1], Yb[idx, 0] - cen[0])
        o = idx[np.argsort(ang)]
        seg = np.linalg.norm(np.roll(Yb[o], -1, axis=0) - Yb[o], axis=1)
        weights[o] = 0.5 * (seg + np.roll(seg, 1))
        order_all.append(o)
    o = np.concatenate(order_all)
    return Yb[o], Nb[o], weights[o]


@dataclass
class FluxReport:
    flux: float
    rhs: float
    bulk: float
    endpoint: float
    tangential_trace: float

    @property
    def ratio(self):
        return self.flux / self.rhs if self.rhs > 0 else (0.0 if self.flux == 0 else np.inf)

    def to_dict(self):
        return dict(flux=self.flux, rhs=self.rhs, bulk=self.bulk, endpoint=self.endpoint,
                    ratio=self.ratio, tangential_trace=self.tangential_trace)


def boundary_flux(P, trajectory, chi, h, chi1=None):
    """int_0^T ||chi h d_n u||^2_{dOmega} dt against the right-hand side
    int_0^T sum_{|a|<=1} ||chi1 (hD)^a u||^2 dt + endpoint products.

    ``chi`` and ``chi1`` are callables of x.  The normal derivative uses the
    one-sided formula (4 u(d) - u(2d)) / (2d) along the normal, with u = 0 on
    the boundary.
    """
    chi1 = chi1 or chi
    dx = P.dx
    Yb, Nb, wb = boundary_samples(P)
    d = 1.5 * dx
    p1, p2 = Yb + d * Nb, Yb + 2 * d * Nb
    xs, ys = P.grid.axes()
    cb = chi(Yb)
    cw = chi1(P.coords)
    c0 = chi(P.coords)
    area = dx * dx
    # Dirichlet ring: obstacle nodes touching an unknown
    obst = ~P.mask
    ring = np.zeros_like(obst)
    ring[1:] |= P.mask[:-1]
    ring[:-1] |= P.mask[1:]
    ring[:, 1:] |= P.mask[:, :-1]
    ring[:, :-1] |= P.mask[:, 1:]
    ring &= obst
    ring[0, :] = ring[-1, :] = ring[:, 0] = ring[:, -1] = False
    flux_t, bulk_t, tang = [], [], 0.0
    grads = []
    for U in trajectory.states:
        G = P.to_grid(U)
        interp = RegularGridInterpolator((xs, ys), G, bounds_error=False, fill_value=0.0)
        dn = (4 * interp(p1) - interp(p2)) / (2 * d)
        flux_t.append(np.sum(wb * np.abs(cb * h * dn) ** 2))
        if ring.any():
            tang = max(tang, float(np.max(np.abs(G[ring]))))
        gx, gy = np.gradient(G, dx, dx)
        gnorm2 = (np.abs(gx) ** 2 + np.abs(gy) ** 2).ravel()[P.index]
        grads.append(gnorm2)
        bulk_t.append(area * np.sum(cw**2 * (np.abs(U) ** 2 + h * h * gnorm2)))
    times = trajectory.times
    flux = _trapezoid(np.array(flux_t), times)
    bulk = _trapezoid(np.array(bulk_t), times)

    def endpoint(i, weight):
        U = trajectory.states[i]
        a = np.sqrt(area * h * np.sum(weight**2 * np.abs(U) ** 2))
        b = np.sqrt(area * h * np.sum(h * h * grads[i]))
        return a * b

    end = endpoint(0, c0) + endpoint(-1, np.ones_like(c0))
    scale = max(np.max(np.abs(trajectory.states[0])), 1e-300)
    return FluxReport(float(flux), float(bulk + end), float(bulk), float(end), tang / scale)


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=float)
