"""Phase-space diagnostics: FFT quantisation and Husimi densities.

Coherent states g_{X,Xi,h}(x) = (pi h)^{-d/4} exp(-|x-X|^2/(2h) + i Xi.(x-X)/h)
factor over coordinates, so the Husimi amplitude <g, u> on a tensor grid of
phase points is two matrix products (G_1 U G_2^T) per snapshot.
"""
from dataclasses import dataclass
import json

import numpy as np

from .errors import AliasRisk, GridTooCoarse, ZeroData
from .evolve import propagate


# --------------------------------------------------------------------------
# Quantisation
# --------------------------------------------------------------------------

def _eta_axes(shape, dx):
    return [2 * np.pi * np.fft.fftfreq(n, dx) for n in shape]


def quantize_spatial(a, h, u, dx, origin=None, x_dependent=True, chunk=2048,
                     alias_fraction=0.8):
    """a(x, hD) u in Kohn-Nirenberg ordering, u a 1D or 2D grid array.

    ``a(x, xi)`` takes x of shape (..., d) and xi of shape (..., d).  With
    ``x_dependent=False`` the symbol is a Fourier multiplier evaluated once.
    Raises AliasRisk when the symbol is nonzero beyond ``alias_fraction`` of
    the Nyquist frequency (in xi = h eta units).
    """
    u = np.asarray(u, dtype=complex)
    d = u.ndim
    shape = u.shape
    origin = np.zeros(d) if origin is None else np.asarray(origin, float)
    axes = [origin[k] + dx * np.arange(shape[k]) for k in range(d)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    etas = _eta_axes(shape, dx)
    E = np.stack(np.meshgrid(*etas, indexing="ij"), -1).reshape(-1, d)
    xi = h * E
    nyq = np.pi / dx * h
    outer = np.max(np.abs(xi), axis=1) > alias_fraction * nyq
    probe = X[:: max(1, X.shape[0] // 64)]
    for x in probe[:64]:
        vals = a(np.broadcast_to(x, xi[outer].shape), xi[outer])
        if np.any(np.abs(vals) > 1e-12):
            raise AliasRisk("symbol reaches beyond the alias-safe band", witness=x)
    uh = np.fft.fftn(u).ravel()
    if not x_dependent:
        mult = a(np.zeros_like(xi), xi).reshape(shape)
        return np.fft.ifftn(mult * uh.reshape(shape))
    # direct sum over frequencies, chunked in x
    out = np.empty(X.shape[0], dtype=complex)
    # x measured from the grid origin so that the DFT phases line up
    Xr = X - origin
    for i in range(0, X.shape[0], chunk):
        xs = X[i:i + chunk]
        sym = a(np.broadcast_to(xs[:, None, :], (xs.shape[0], xi.shape[0], d)),
                np.broadcast_to(xi[None, :, :], (xs.shape[0], xi.shape[0], d)))
        phase = np.exp(1j * Xr[i:i + chunk] @ E.T)
        out[i:i + chunk] = (sym * phase) @ uh / uh.size
    return out.reshape(shape)


# --------------------------------------------------------------------------
# Husimi densities
# --------------------------------------------------------------------------

def coherent_state(x, X, Xi, h):
    x = np.asarray(x, float)
    d = x.shape[-1]
    diff = x - np.asarray(X, float)
    return (np.pi * h) ** (-d / 4) * np.exp(-np.sum(diff * diff, -1) / (2 * h)
                                           + 1j * diff @ np.asarray(Xi, float) / h)


@dataclass
class PhaseGrid:
    """Tensor grid of phase points: x_axes[k], xi_axes[k] per coordinate."""

    x_axes: list
    xi_axes: list

    @property
    def dim(self):
        return len(self.x_axes)

    @classmethod
    def window(cls, x_center, xi_center, x_half, xi_half, spacing):
        xa, xia = [], []
        for c, half in zip(np.atleast_1d(x_center), np.broadcast_to(x_half, np.shape(np.atleast_1d(x_center)))):
            n = int(np.ceil(half / spacing))
            xa.append(c + spacing * np.arange(-n, n + 1))
        for c, half in zip(np.atleast_1d(xi_center), np.broadcast_to(xi_half, np.shape(np.atleast_1d(xi_center)))):
            n = int(np.ceil(half / spacing))
            xia.append(c + spacing * np.arange(-n, n + 1))
        return cls(xa, xia)

    def spacing(self):
        return max(max(np.max(np.diff(a)) for a in self.x_axes),
                   max(np.max(np.diff(a)) for a in self.xi_axes))

    def cell(self):
        return float(np.prod([np.diff(a)[0] for a in self.x_axes])
                     * np.prod([np.diff(a)[0] for a in self.xi_axes]))


def _factor(grid_axis, X_axis, Xi_axis, h):
    """conj of 1D coherent factors: rows (X, Xi) pairs, columns grid nodes."""
    diff = grid_axis[None, None, :] - X_axis[:, None, None]
    g = (np.pi * h) ** -0.25 * np.exp(-diff**2 / (2 * h) + 1j * Xi_axis[None, :, None] * diff / h)
    return np.conj(g).reshape(-1, grid_axis.size)


class HusimiTransform:
    """Precomputed factors for repeated Husimi amplitudes on one phase grid."""

    def __init__(self, grid_axes, dx, phase, h, check=True):
        if check and phase.spacing() > 0.5 * np.sqrt(h) * (1 + 1e-9):
            raise GridTooCoarse(f"phase grid spacing {phase.spacing():.3g} exceeds sqrt(h)/2")
        self.phase, self.h, self.dx = phase, h, dx
        self.factors = [_factor(ax, X, Xi, h) for ax, X, Xi in
                        zip(grid_axes, phase.x_axes, phase.xi_axes)]

    def amplitude(self, U):
        U = np.asarray(U, dtype=complex)
        d = U.ndim
        if d == 1:
            A = self.factors[0] @ U * self.dx
            return A.reshape(len(self.phase.x_axes[0]), len(self.phase.xi_axes[0]))
        A = self.factors[0] @ U @ self.factors[1].T * self.dx**2
        n1, m1 = len(self.phase.x_axes[0]), len(self.phase.xi_axes[0])
        n2, m2 = len(self.phase.x_axes[1]), len(self.phase.xi_axes[1])
        return A.reshape(n1, m1, n2, m2).transpose(0, 2, 1, 3)  # (x1, x2, xi1, xi2)

    def density(self, U):
        d = np.ndim(U)
        return np.abs(self.amplitude(U)) ** 2 / (2 * np.pi * self.h) ** d


@dataclass
class HusimiMeasure:
    phase: PhaseGrid
    density: np.ndarray  # (x1[, x2], xi1[, xi2])
    h: float
    mass: float

    def centroid(self):
        d = self.phase.dim
        D = self.density
        tot = D.sum()
        if tot == 0:
            raise ZeroData("empty Husimi density")
        xs, xis = [], []
        for k in range(d):
            shape = [1] * (2 * d)
            shape[k] = -1
            xs.append(float(np.sum(D * self.phase.x_axes[k].reshape(shape)) / tot))
            shape = [1] * (2 * d)
            shape[d + k] = -1
            xis.append(float(np.sum(D * self.phase.xi_axes[k].reshape(shape)) / tot))
        return np.array(xs), np.array(xis)

    def peak(self):
        idx = np.unravel_index(np.argmax(self.density), self.density.shape)
        d = self.phase.dim
        return (np.array([self.phase.x_axes[k][idx[k]] for k in range(d)]),
                np.array([self.phase.xi_axes[k][idx[d + k]] for k in range(d)]))

    def mass_within(self, x, xi, radius):
        d = self.phase.dim
        grids = np.meshgrid(*self.phase.x_axes, *self.phase.xi_axes, indexing="ij")
        r2 = sum((grids[k] - x[k]) ** 2 for k in range(d)) + \
            sum((grids[d + k] - xi[k]) ** 2 for k in range(d))
        return float(self.density[r2 <= radius**2].sum() * self.phase.cell())

    def save(self, stem):
        np.save(f"{stem}.npy", self.density)
        header = {"x_axes": [a.tolist() for a in self.phase.x_axes],
                  "xi_axes": [a.tolist() for a in self.phase.xi_axes],
                  "h": self.h, "mass": self.mass, "shape": list(self.density.shape)}
        with open(f"{stem}.json", "w") as fh:
            json.dump(header, fh)


def husimi(u, h, phase, dx, origin=None, grid_axes=None):
    """Husimi density |<g_{X,Xi,h}, u>|^2 / (2 pi h)^d of a grid function u."""
    u = np.asarray(u, dtype=complex)
    if grid_axes is None:
        origin = np.zeros(u.ndim) if origin is None else np.asarray(origin, float)
        grid_axes = [origin[k] + dx * np.arange(u.shape[k]) for k in range(u.ndim)]
    T = HusimiTransform(grid_axes, dx, phase, h)
    D = T.density(u)
    return HusimiMeasure(phase, D, h, float(D.sum() * phase.cell()))


# --------------------------------------------------------------------------
# Support in the characteristic set
# --------------------------------------------------------------------------

@dataclass
class SigmaReport:
    fraction: float
    band: float
    n_times: int
    n_phase: int
    tau_resolution: float

    def to_dict(self):
        return dict(fraction=self.fraction, band=self.band, n_times=self.n_times,
                    n_phase=self.n_phase, tau_resolution=self.tau_resolution)


def _moments(P, U, h):
    """Position and momentum (h D) expectations of a grid state."""
    G = P.to_grid(U)
    w = np.abs(G) ** 2
    tot = w.sum()
    xs, ys = P.grid.axes()
    xbar = np.array([np.sum(w * xs[:, None]), np.sum(w * ys[None, :])]) / tot
    gx, gy = np.gradient(G, P.dx, P.dx)
    xibar = np.array([np.real(np.vdot(G, -1j * h * gx)), np.real(np.vdot(G, -1j * h * gy))]) / tot
    return xbar, xibar


def check_support_sigma(P, trajectory, h, field=None, C_band=5.0, xi_half=None,
                        keep_rel=1e-6):
    """Mass fraction of the space-time Husimi density with |tau + p(x, xi)| <= C_band sqrt(h).

    Spatial Husimi amplitudes are taken on one phase window covering the
    whole run; each phase point's time series is Hann-windowed and Fourier
    transformed, and temporal frequency omega maps to tau = -h^2 omega (the
    evolution is e^{itP}).
    """
    field = field or P.field
    states = trajectory.states
    if not np.any(states):
        raise ZeroData("zero trajectory")
    times = trajectory.times
    dts = np.diff(times)
    if np.ptp(dts) > 1e-9 * dts.mean():
        raise ValueError("snapshots must be uniform in time")
    dt = dts.mean()
    # phase window: bounding box of the state over the run, momentum around the band
    xs, ys = P.grid.axes()
    mass = np.max(np.abs(states) ** 2, axis=0)
    occ = P.coords[mass > 1e-8 * mass.max()]
    lo, hi = occ.min(axis=0) - 3 * np.sqrt(h), occ.max(axis=0) + 3 * np.sqrt(h)
    spacing = 0.5 * np.sqrt(h)
    p_top = np.sqrt(2.2)
    xi_half = xi_half or p_top
    phase = PhaseGrid.window(0.5 * (lo + hi), np.zeros(2), 0.5 * (hi - lo), xi_half, spacing)
    T = HusimiTransform([xs, ys], P.dx, phase, h)
    # pass 1: find phase points that ever carry mass
    peak = None
    for U in states:
        D = np.abs(T.amplitude(P.to_grid(U))) ** 2
        peak = D if peak is None else np.maximum(peak, D)
    keep = peak > keep_rel * peak.max()
    series = np.empty((len(states), int(keep.sum())), dtype=complex)
    for i, U in enumerate(states):
        series[i] = T.amplitude(P.to_grid(U))[keep]
    win = np.hanning(len(states))[:, None]
    spec = np.fft.fft(series * win, axis=0)
    omega = 2 * np.pi * np.fft.fftfreq(len(states), dt)
    tau = -h * h * omega
    grids = np.meshgrid(*phase.x_axes, *phase.xi_axes, indexing="ij")
    X = np.stack(grids[:2], -1)[keep]
    XI = np.stack(grids[2:], -1)[keep]
    pvals = field.p(X, XI)
    W = np.abs(spec) ** 2
    near = np.abs(tau[:, None] + pvals[None, :]) <= C_band * np.sqrt(h)
    frac = float(W[near].sum() / W.sum())
    return SigmaReport(frac, C_band * np.sqrt(h), len(states), int(keep.sum()),
                       float(h * h * 2 * np.pi / (len(states) * dt)))


# --------------------------------------------------------------------------
# Centroid tracking
# --------------------------------------------------------------------------

@dataclass
class CentroidTrack:
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    ray_x: np.ndarray
    ray_xi: np.ndarray
    error: np.ndarray
    guarded: np.ndarray  # True where the snapshot lies inside a reflection guard
    hit_times: np.ndarray
    mass: np.ndarray

    @property
    def max_error(self):
        ok = ~self.guarded
        return float(np.max(self.error[ok])) if ok.any() else np.nan

    def post_bounce_error(self):
        if self.hit_times.size == 0:
            return self.max_error
        ok = (~self.guarded) & (self.times > self.hit_times[0])
        return float(np.max(self.error[ok])) if ok.any() else np.nan

    def to_csv(self, path):
        cols = [self.times, self.x, self.xi, self.ray_x, self.ray_xi, self.error, self.guarded]
        np.savetxt(path, np.column_stack(cols), delimiter=",",
                   header="t,x1,x2,xi1,xi2,ray_x1,ray_x2,ray_xi1,ray_xi2,error,guarded",
                   comments="")


def track_centroid(P, u0, flow, T, dt, h, every=8, guard=3.0, window=6.0):
    """Husimi centroid of e^{itP} u0 against the ray Gamma(s) at s = -t/h.

    ``flow`` is a GeneralizedTrajectory started at the packet's (x0, xi0)
    and integrated over s in [0, -T/h].  Snapshots within ``guard`` packet
    widths of a reflection (|t - t_hit| <= guard sqrt(h) h / (2|xi|)) are
    flagged, since there the packet is split between incoming and outgoing
    directions.  The Husimi window is centred on the state's own first
    moments, half-width ``window`` sqrt(h) in x and xi.
    """
    xs, ys = P.grid.axes()
    spacing = 0.5 * np.sqrt(h)
    rows = []

    def observe(t, u):
        xbar, xibar = _moments(P, u, h)
        phase = PhaseGrid.window(xbar, xibar, window * np.sqrt(h), window * np.sqrt(h), spacing)
        HT = HusimiTransform([xs, ys], P.dx, phase, h)
        D = HT.density(P.to_grid(u))
        meas = HusimiMeasure(phase, D, h, float(D.sum() * phase.cell()))
        cx, cxi = meas.centroid()
        rows.append((t, cx, cxi, meas.mass))

    propagate(P, u0, T, dt, every=every, keep=False, observe=observe)
    times = np.array([r[0] for r in rows])
    cx = np.array([r[1] for r in rows])
    cxi = np.array([r[2] for r in rows])
    mass = np.array([r[3] for r in rows])
    rx, rxi = [], []
    for t in times:
        pt = flow.state_at(-t / h)
        rx.append(pt.x)
        rxi.append(pt.xi)
    rx, rxi = np.array(rx), np.array(rxi)
    err = np.hypot(np.linalg.norm(cx - rx, axis=1), np.linalg.norm(cxi - rxi, axis=1))
    hits = np.array(sorted(-s * h for s in flow.hit_s())) if hasattr(flow, "hit_s") else np.array([])
    speed = 2 * np.linalg.norm(rxi[0])
    half = guard * np.sqrt(h) * h / speed
    guarded = np.zeros(times.size, bool)
    for th in hits:
        guarded |= np.abs(times - th) <= half
    return CentroidTrack(times, cx, cxi, rx, rxi, err, guarded, hits, mass)
