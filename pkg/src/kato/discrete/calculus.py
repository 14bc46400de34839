"""Functions of a discrete self-adjoint operator.

Two independent backends: the eigendecomposition (exact up to LAPACK) and the
Helffer-Sjostrand area integral

    theta(A) = -(1/pi) int_C  dbar(theta~)(z) (z - A)^{-1} dx dy,

evaluated with Gauss-Legendre panels and batched resolvent solves.
"""
from dataclasses import dataclass
from math import factorial
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import QuadratureNotConverged, SpectrumNotCovered
from ..smooth import DyadicPartition, falling
from .operator import DiscreteOperator, SpectralData


# --------------------------------------------------------------------------
# Almost-analytic extension
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AlmostAnalyticExtension:
    """theta~(x, y) = sum_{l=0}^{N} theta^(l)(x) (iy)^l / l! * phi(y / <x>).

    ``theta(t, deriv)`` must return derivatives up to order N + 1.
    ``support`` bounds supp theta; ``breakpoints`` lists points where theta is
    only finitely smooth (quadrature panels are aligned with them).
    """

    theta: Callable
    N: int = 3
    support: tuple = (0.5, 2.0)
    breakpoints: tuple = ()

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("almost-analytic order must be at least 2")

    def phi(self, t, deriv=0):
        # 1 for |t| <= 1, 0 for |t| >= 2
        t = np.asarray(t, dtype=float)
        val = falling(np.abs(t), 1.0, 2.0, deriv)
        return val * np.sign(t) if deriv % 2 else val

    def top_derivative_l1(self, n=20001):
        lo, hi = self.support
        t = np.linspace(lo, hi, n)
        return float(np.trapezoid(np.abs(self.theta(t, self.N + 1)), t))

    def y_min(self, discard=1e-6):
        """Height below which the discarded strip contributes at most ``discard``."""
        N = self.N
        mass = self.top_derivative_l1()
        if mass == 0:
            return 1e-3
        return (discard * np.pi * N * factorial(N) / mass) ** (1.0 / N)


def dyadic_extension(N=3, partition=None):
    part = partition or DyadicPartition()
    return AlmostAnalyticExtension(part.theta, N, (0.5, 2.0), (0.5, 1.0, 2.0))


def almost_analytic(ext, x, y):
    """(theta~, dbar theta~) at (x, y), closed form."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    N = ext.N
    jx = np.sqrt(1.0 + x * x)
    t = y / jx
    ph = ext.phi(t)
    dph = ext.phi(t, 1)
    S = np.zeros(x.shape, dtype=complex)
    for l in range(N + 1):
        S = S + ext.theta(x, l) * (1j * y) ** l / factorial(l)
    value = S * ph
    # dbar of the truncated Taylor sum telescopes to its top term
    dbar_S = 0.5 * ext.theta(x, N + 1) * (1j * y) ** N / factorial(N)
    dbar_phi = 0.5 * dph * (-y * x / jx**3 + 1j / jx)
    return value, dbar_S * ph + S * dbar_phi


def dbar_slope(ext, ys=(1e-1, 1e-2, 1e-3, 1e-4), n_x=4001):
    """Least-squares slope of log max_x |dbar theta~(x, y)| against log y."""
    lo, hi = ext.support
    xs = np.linspace(lo - 0.1, hi + 0.1, n_x)
    peaks = []
    for y in ys:
        _, d = almost_analytic(ext, xs, np.full_like(xs, y))
        peaks.append(np.max(np.abs(d)))
    peaks = np.asarray(peaks)
    slope = np.polyfit(np.log(ys), np.log(peaks), 1)[0]
    return float(slope), peaks


# --------------------------------------------------------------------------
# Resolvent solves
# --------------------------------------------------------------------------

def _tridiagonal_parts(A):
    A = sp.csr_matrix(A)
    n = A.shape[0]
    coo = A.tocoo()
    if coo.nnz and np.max(np.abs(coo.row - coo.col)) > 1:
        return None
    return A.diagonal(), A.diagonal(1) if n > 1 else np.zeros(0)


def _batched_tridiag_solve(z, diag, off, V):
    """Solve (z_k I - A) X_k = V for all k; A symmetric tridiagonal (diag, off)."""
    nz = z.size
    n = diag.size
    m = V.shape[1]
    b = z[:, None] - diag[None, :]  # (nz, n)
    c = -off  # super/sub diagonal of (z - A)
    cp = np.empty((nz, max(n - 1, 1)), dtype=complex)
    dp = np.empty((nz, n, m), dtype=complex)
    denom = b[:, 0]
    if n > 1:
        cp[:, 0] = c[0] / denom
    dp[:, 0] = V[0][None, :] / denom[:, None]
    for i in range(1, n):
        denom = b[:, i] - c[i - 1] * cp[:, i - 1]
        if i < n - 1:
            cp[:, i] = c[i] / denom
        dp[:, i] = (V[i][None, :] - c[i - 1] * dp[:, i - 1]) / denom[:, None]
    X = dp
    for i in range(n - 2, -1, -1):
        X[:, i] -= cp[:, i, None] * X[:, i + 1]
    return X  # (nz, n, m)


class ResolventSolver:
    """(z - A)^{-1} V for batches of z.  Tridiagonal matrices use a vectorised
    Thomas sweep; anything else a fresh sparse LU per z."""

    def __init__(self, A):
        self.A = sp.csr_matrix(A)
        self.n = self.A.shape[0]
        self.tri = _tridiagonal_parts(self.A)

    def solve(self, z, V):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self.tri is not None:
            out = []
            chunk = max(1, 400000 // max(1, self.n * V.shape[1]))
            for i in range(0, z.size, chunk):
                out.append(_batched_tridiag_solve(z[i:i + chunk], *self.tri, V))
            return np.concatenate(out, axis=0)
        eye = sp.identity(self.n, format="csc", dtype=complex)
        Ac = self.A.tocsc().astype(complex)
        return np.stack([splu(zk * eye - Ac).solve(V.astype(complex)) for zk in z])


def _gauss(n):
    return np.polynomial.legendre.leggauss(n)


def _panel_nodes(edges, n):
    g, w = _gauss(n)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * g[None, :] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def _x_edges(ext, width):
    lo, hi = ext.support
    cuts = sorted({lo, hi, *[p for p in ext.breakpoints if lo < p < hi]})
    edges = [cuts[0]]
    for a, b in zip(cuts[:-1], cuts[1:]):
        k = max(1, int(np.ceil((b - a) / width)))
        edges.extend(np.linspace(a, b, k + 1)[1:])
    return np.asarray(edges)


def hs_quadrature(ext, width_factor=1.0, n_gauss=8, y_ratio=2.0, discard=1e-6):
    """Nodes z and weights w for -(1/pi) int_{y>0} dbar(theta~)(z) (.) dx dy.

    Below y = 1 (where phi = 1) geometric y-panels carry x-panels of width
    proportional to y, since the resolvent varies on that scale.  Above, the
    y-range of each x-node is split at <x> and 2<x> so the cutoff phi is
    polynomial on every segment.
    """
    y_lo = ext.y_min(discard)
    n_y = max(1, int(np.ceil(np.log(1.0 / y_lo) / np.log(y_ratio))))
    y_edges = y_lo * (1.0 / y_lo) ** (np.arange(n_y + 1) / n_y)
    zs, ws = [], []

    def push(X, Y, W):
        _, d = almost_analytic(ext, X, Y)
        keep = np.abs(d) > 0
        zs.append((X + 1j * Y)[keep])
        ws.append((-W * d / np.pi)[keep])

    for ya, yb in zip(y_edges[:-1], y_edges[1:]):
        yn, yw = _panel_nodes(np.array([ya, yb]), n_gauss)
        xn, xw = _panel_nodes(_x_edges(ext, width_factor * ya), n_gauss)
        X, Y = np.meshgrid(xn, yn, indexing="ij")
        push(X, Y, np.outer(xw, yw))
    g, gw = _gauss(2 * n_gauss)
    xn, xw = _panel_nodes(_x_edges(ext, 0.25 * width_factor), 2 * n_gauss)
    jx = np.sqrt(1.0 + xn * xn)
    for a, b in ((np.ones_like(jx), jx), (jx, 2.0 * jx)):
        half = 0.5 * (b - a)
        Y = (half[:, None] * g[None, :] + 0.5 * (a + b)[:, None])
        W = xw[:, None] * half[:, None] * gw[None, :]
        X = np.broadcast_to(xn[:, None], Y.shape)
        ok = half > 0
        push(X[ok], Y[ok], W[ok])
    return np.concatenate(zs), np.concatenate(ws)


def hs_apply(A, ext, V, width_factor=2.0, n_gauss=8, rel_tol=1e-4, max_levels=3,
             batch=2000):
    """theta(A) V for real symmetric A and real or complex V via the
    Helffer-Sjostrand formula.  The panel width is halved until two successive
    levels agree to ``rel_tol``."""
    V = np.asarray(V)
    vec = V.ndim == 1
    V2 = V[:, None] if vec else V
    if np.iscomplexobj(V2):
        R = np.concatenate([V2.real, V2.imag], axis=1)
    else:
        R = V2.astype(float)
    solver = ResolventSolver(A)

    def level(wf):
        z, w = hs_quadrature(ext, wf, n_gauss)
        acc = np.zeros(R.shape, dtype=complex)
        for i in range(0, z.size, batch):
            X = solver.solve(z[i:i + batch], R)
            acc += np.einsum("k,knm->nm", w[i:i + batch], X)
        # the lower half-plane contributes the complex conjugate
        return 2.0 * acc.real, z.size

    prev, _ = level(width_factor)
    history = []
    for _ in range(max_levels):
        width_factor /= 2.0
        cur, nz = level(width_factor)
        scale = max(np.linalg.norm(cur), 1e-300)
        diff = np.linalg.norm(cur - prev) / scale
        history.append((nz, diff))
        if diff <= rel_tol or np.linalg.norm(cur) < 1e-14:
            break
        prev = cur
    else:
        raise QuadratureNotConverged(f"HS quadrature still changing by {diff:.2e}",
                                     witness=history)
    if np.iscomplexobj(V2):
        m = V2.shape[1]
        cur = cur[:, :m] + 1j * cur[:, m:]
    return cur[:, 0] if vec else cur


# --------------------------------------------------------------------------
# Public functional calculus
# --------------------------------------------------------------------------

def _spectral(P):
    if isinstance(P, DiscreteOperator):
        return P.spectral()
    if isinstance(P, SpectralData):
        return P
    from scipy.linalg import eigh

    M = P.toarray() if sp.issparse(P) else np.asarray(P, dtype=float)
    w, V = eigh(M)
    return SpectralData(w, V, True)


def _matrix(P):
    if isinstance(P, DiscreteOperator):
        return P.matrix
    return sp.csr_matrix(P)


def apply_function(P, f, h, v, backend="eigen", support=None, ext=None):
    """f(h^2 P) v.

    ``f(t)`` (or ``f(t, deriv)`` for the hs backend) acts on h^2-scaled
    eigenvalues.  ``support`` is the interval outside which f vanishes; the
    eigen backend needs it only when the spectral data is partial.
    """
    h2 = float(h) ** 2
    if backend == "eigen":
        sd = _spectral(P)
        if support is not None:
            sd.require_cover(support[0] / h2, support[1] / h2)
        elif not sd.complete:
            raise SpectrumNotCovered("partial spectral data and no support given")
        return sd.apply(lambda lam: f(h2 * lam), v)
    if backend == "hs":
        if ext is None:
            lo, hi = support if support is not None else (0.5, 2.0)
            ext = AlmostAnalyticExtension(f, 3, (lo, hi))
        return hs_apply(h2 * _matrix(P), ext, v)
    raise ValueError(f"unknown backend {backend!r}")


def fractional_power(P, s, v):
    """Lambda^s v with Lambda = P^{1/2}, i.e. P^{s/2} v."""
    if not -1.0 <= s <= 1.0:
        raise ValueError("s must lie in [-1, 1]")
    sd = _spectral(P)
    if not sd.complete:
        raise SpectrumNotCovered("fractional powers need the full spectrum")
    if s == 0:
        return np.array(v, copy=True)
    return sd.apply(lambda lam: lam ** (0.5 * s), v)


def operator_power(P, q):
    """Dense matrix P^q (desk scale)."""
    sd = _spectral(P)
    return (sd.vectors * sd.values**q) @ sd.vectors.T


def function_matrix(P, g):
    """Dense matrix g(P) from the eigendecomposition."""
    sd = _spectral(P)
    return (sd.vectors * g(sd.values)) @ sd.vectors.T


@dataclass
class LPDecomposition:
    pieces: list
    labels: list
    energies: np.ndarray
    residual: float
    norm_ratio: float


def littlewood_paley(P, v, p_max, partition=None):
    """Pieces psi(P)v, theta(2^-p P)v (p = 0..p_max) with their energies."""
    part = partition or DyadicPartition()
    sd = _spectral(P)
    if 2.0**p_max < sd.lam_max:
        raise SpectrumNotCovered(f"2^{p_max} < lambda_max = {sd.lam_max:.4g}")
    c = sd.coefficients(v)
    lam = sd.values
    filters = [part.psi(lam)] + [part.theta(lam / 2.0**p) for p in range(p_max + 1)]
    labels = ["psi"] + [f"theta_{p}" for p in range(p_max + 1)]
    pieces = []
    for g in filters:
        gc = g[:, None] * c if c.ndim == 2 else g * c
        pieces.append(sd.vectors @ gc)
    energies = np.array([np.linalg.norm(p) ** 2 for p in pieces])
    total = np.sum(pieces, axis=0)
    vn = np.linalg.norm(v)
    residual = float(np.linalg.norm(v - total) / max(vn, 1e-300))
    return LPDecomposition(pieces, labels, energies, residual, float(energies.sum() / vn**2))
