"""Finite-difference Dirichlet realisation of P = sum D_j a^{jk} D_k + V.

Unknowns are grid nodes strictly inside the box and outside the obstacle;
all other nodes carry the Dirichlet value 0 and are eliminated.  Diagonal
metric entries sit on cell faces (the usual conservative 3/5-point stencil);
off-diagonal entries, when present, are discretised through cell-centred
gradients so the assembled matrix is exactly symmetric.
"""
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.sparse.linalg import eigsh

from ..errors import GridTooCoarse, SpectrumNotCovered
from ..smooth import radial_cutoff
from ..symbols import SymbolField, japanese

DENSE_LIMIT = 4000


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid.  In 1D: interval (lo, hi) with n interior nodes.  In 2D:
    box [-L, L]^2 (or ``box`` = (xlo, xhi, ylo, yhi)) with spacing dx."""

    dim: int = 2
    dx: float = 1.0 / 16
    L: float = 6.0
    box: Optional[tuple] = None
    interval: tuple = (0.0, np.pi)
    n: int = 200
    order: int = 2

    def axes(self):
        if self.dim == 1:
            lo, hi = self.interval
            return [np.linspace(lo, hi, self.n + 2)]
        xlo, xhi, ylo, yhi = self.box if self.box is not None else (-self.L, self.L, -self.L, self.L)
        nx = int(round((xhi - xlo) / self.dx))
        ny = int(round((yhi - ylo) / self.dx))
        return [xlo + self.dx * np.arange(nx + 1), ylo + self.dx * np.arange(ny + 1)]

    @property
    def spacing(self):
        if self.dim == 1:
            lo, hi = self.interval
            return (hi - lo) / (self.n + 1)
        return self.dx


@dataclass
class DiscreteOperator:
    matrix: sp.csr_matrix
    kinetic: sp.csr_matrix
    potential: np.ndarray
    coords: np.ndarray  # (n, d) node positions of the unknowns
    grid: GridSpec
    shape: tuple  # full grid shape (including Dirichlet nodes)
    index: np.ndarray  # full-grid flat index of each unknown
    mask: np.ndarray  # full-grid boolean: node is an unknown
    field: Optional[SymbolField] = None
    obstacle: object = None
    _spectral: Optional["SpectralData"] = dc_field(default=None, repr=False)

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def dx(self):
        return self.grid.spacing

    @property
    def cell_volume(self):
        return self.dx ** self.grid.dim

    def to_grid(self, u, fill=0.0):
        full = np.full(int(np.prod(self.shape)), fill, dtype=np.result_type(u, float))
        full[self.index] = u
        return full.reshape(self.shape)

    def from_function(self, f):
        return np.asarray(f(self.coords))

    def spectral(self, k=None):
        """Dense eigendecomposition (cached) when n <= DENSE_LIMIT."""
        if self._spectral is None:
            self._spectral = spectral_data(self, k)
        return self._spectral

    def export_triplets(self, path):
        coo = self.matrix.tocoo()
        np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]),
                   fmt=["%d", "%d", "%.17g"], header="row col value")


@dataclass
class SpectralData:
    values: np.ndarray
    vectors: np.ndarray
    complete: bool
    residual: float = 0.0
    orthogonality: float = 0.0

    @property
    def lam_min(self):
        return float(self.values[0])

    @property
    def lam_max(self):
        return float(self.values[-1])

    def coefficients(self, v):
        return self.vectors.T @ v

    def apply(self, g, v):
        """sum g(lambda_k) <v_k, v> v_k for g acting on eigenvalues."""
        c = self.vectors.T @ v
        gv = np.asarray(g(self.values))
        if c.ndim == 2:
            gv = gv[:, None]
        return self.vectors @ (gv * c)

    def require_cover(self, lo, hi):
        if self.complete:
            return
        if lo < self.values[0] or hi > self.values[-1]:
            raise SpectrumNotCovered(
                f"partial spectrum [{self.values[0]:.4g}, {self.values[-1]:.4g}] "
                f"does not cover [{lo:.4g}, {hi:.4g}]")


def spectral_data(P, k=None, sigma=None, which="LM"):
    """Eigenpairs of P.  Dense for n <= DENSE_LIMIT (all pairs), otherwise
    ``k`` Lanczos pairs (shift-invert about ``sigma`` if given)."""
    n = P.n
    tri = P.grid.dim == 1 and P.grid.order == 2
    if tri and k is None:
        # symmetric tridiagonal: full eigendecomposition at O(n^2) cost
        w, V = eigh_tridiagonal(P.matrix.diagonal(), P.matrix.diagonal(1), lapack_driver="stemr")
        complete = True
    elif n <= DENSE_LIMIT and k is None:
        w, V = eigh(P.matrix.toarray())
        complete = True
    else:
        k = k or min(200, n - 2)
        w, V = eigsh(P.matrix.tocsc(), k=k, sigma=sigma, which=which)
        order = np.argsort(w)
        w, V = w[order], V[:, order]
        complete = False
    R = P.matrix @ V - V * w
    res = float(np.max(np.linalg.norm(R, axis=0))) if len(w) else 0.0
    # orthogonality on at most 512 evenly spread columns
    cols = V[:, np.unique(np.linspace(0, V.shape[1] - 1, min(512, V.shape[1])).astype(int))]
    orth = float(np.max(np.abs(cols.T @ cols - np.eye(cols.shape[1])))) if cols.size else 0.0
    return SpectralData(w, V, complete, res, orth)


# --------------------------------------------------------------------------
# Assembly
# --------------------------------------------------------------------------

def _mask_2d(grid, obstacle, X):
    mask = np.ones(X.shape[:-1], dtype=bool)
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = False
    if obstacle is not None:
        mask &= obstacle.b(X) > 0
    return mask


def _second_diff(n, order):
    """Dirichlet second-difference matrix -d^2 (times dx^2) on n interior nodes."""
    if order == 2:
        return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    if order == 4:
        c = np.array([1, -16, 30, -16, 1]) / 12.0
        main = c[2] * np.ones(n)
        # odd reflection across the wall node: the ghost two steps out equals -u
        main[[0, -1]] -= c[0]
        return sp.diags([c[0] * np.ones(n - 2), c[1] * np.ones(n - 1), main,
                         c[3] * np.ones(n - 1), c[4] * np.ones(n - 2)], [-2, -1, 0, 1, 2])
    raise ValueError("order must be 2 or 4")


def assemble(field, obstacle, grid, min_points=16):
    """Sparse symmetric matrix of P on the unknowns of ``grid``."""
    dx = grid.spacing
    if grid.dim == 1:
        (xs,) = grid.axes()
        inner = xs[1:-1]
        n = inner.size
        if grid.order == 4:
            if not field.flat:
                raise ValueError("fourth-order stencil needs a flat metric")
            K = _second_diff(n, 4) / dx**2
        else:
            faces = 0.5 * (xs[:-1] + xs[1:])
            af = field.metric(faces[:, None])[:, 0, 0]
            main = (af[:-1] + af[1:]) / dx**2
            off = -af[1:-1] / dx**2
            K = sp.diags([off, main, off], [-1, 0, 1])
        Vv = field.potential(inner[:, None])
        K = sp.csr_matrix(K)
        M = (K + sp.diags(Vv)).tocsr()
        return DiscreteOperator(M, K, Vv, inner[:, None], grid, (xs.size,),
                                np.arange(1, xs.size - 1), np.r_[False, np.ones(n, bool), False],
                                field, obstacle)
    if obstacle is not None:
        R = obstacle.params.get("feature", obstacle.R0)
        if R / dx < min_points / 2:
            raise GridTooCoarse(f"dx = {dx:.3g} gives fewer than {min_points} points across the obstacle")
    xs, ys = grid.axes()
    X = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
    shape = X.shape[:-1]
    mask = _mask_2d(grid, obstacle, X)
    flat_index = np.flatnonzero(mask.ravel())
    N = flat_index.size
    lookup = -np.ones(mask.size, dtype=np.int64)
    lookup[flat_index] = np.arange(N)
    lookup = lookup.reshape(shape)
    coords = X.reshape(-1, 2)[flat_index]
    rows, cols, vals = [], [], []

    if grid.order == 4:
        if not field.flat:
            raise ValueError("fourth-order stencil needs a flat metric")
        coef = {0: 30 / 12, 1: -16 / 12, 2: 1 / 12}
        I, J = np.nonzero(mask)
        me = lookup[I, J]
        rows.append(me); cols.append(me); vals.append(np.full(N, 2 * coef[0] / dx**2))
        def neighbour(axis, step):
            I2 = I + (step if axis == 0 else 0)
            J2 = J + (step if axis == 1 else 0)
            ok = (I2 >= 0) & (I2 < shape[0]) & (J2 >= 0) & (J2 < shape[1])
            nb = np.full(N, -1)
            nb[ok] = lookup[I2[ok], J2[ok]]
            return nb

        for axis in (0, 1):
            for step in (-2, -1, 1, 2):
                nb = neighbour(axis, step)
                ok = nb >= 0
                if abs(step) == 2:
                    # next to a wall node the far ghost mirrors to -u (odd reflection)
                    wall = neighbour(axis, step // 2) < 0
                    ok &= ~wall
                    rows.append(me[wall]); cols.append(me[wall])
                    vals.append(np.full(wall.sum(), -coef[2] / dx**2))
                rows.append(me[ok]); cols.append(nb[ok])
                vals.append(np.full(ok.sum(), coef[abs(step)] / dx**2))
    else:
        for axis in (0, 1):
            # faces between node (i) and node (i+1) along ``axis``
            sl_a = [slice(None), slice(None)]
            sl_b = [slice(None), slice(None)]
            sl_a[axis] = slice(0, -1)
            sl_b[axis] = slice(1, None)
            Xa, Xb = X[tuple(sl_a)], X[tuple(sl_b)]
            af = field.metric(0.5 * (Xa + Xb))[..., axis, axis] / dx**2
            ia, ib = lookup[tuple(sl_a)], lookup[tuple(sl_b)]
            # each face contributes af to both diagonals and -af off-diagonal
            for i_self, i_other in ((ia, ib), (ib, ia)):
                ok = i_self >= 0
                rows.append(i_self[ok]); cols.append(i_self[ok]); vals.append(af[ok])
                ok2 = ok & (i_other >= 0)
                rows.append(i_self[ok2]); cols.append(i_other[ok2]); vals.append(-af[ok2])
        # cross terms from cell-centred gradients
        centers = 0.25 * (X[:-1, :-1] + X[1:, :-1] + X[:-1, 1:] + X[1:, 1:])
        a12 = field.metric(centers)[..., 0, 1]
        if np.any(np.abs(a12) > 0):
            corners = [lookup[:-1, :-1], lookup[1:, :-1], lookup[:-1, 1:], lookup[1:, 1:]]
            gx = np.array([-1, 1, -1, 1]) / (2 * dx)
            gy = np.array([-1, -1, 1, 1]) / (2 * dx)
            for p in range(4):
                for q in range(4):
                    w = a12 * (gx[p] * gy[q] + gy[p] * gx[q])
                    ok = (corners[p] >= 0) & (corners[q] >= 0)
                    rows.append(corners[p][ok]); cols.append(corners[q][ok]); vals.append(w[ok])
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    K = 0.5 * (K + K.T)
    Vv = field.potential(coords)
    M = (K + sp.diags(Vv)).tocsr()
    return DiscreteOperator(M, K.tocsr(), Vv, coords, grid, shape, flat_index, mask, field, obstacle)


def extend_operator(field, obstacle=None, R0=None):
    """a~ = chi2 Id + (1 - chi2) a and V~ = chi2 + (1 - chi2) V with chi2 = 1 on
    |x| <= R0 and 0 on |x| >= R0 + 1."""
    R0 = (obstacle.R0 if obstacle is not None else field.R0) if R0 is None else R0
    d = field.dim
    eye = np.eye(d)

    def chi2(x):
        return radial_cutoff(x, R0, R0 + 1.0)

    def a(x):
        c = chi2(x)[..., None, None]
        return c * eye + (1 - c) * field.metric(x)

    def grad_a(x):
        c = chi2(x)[..., None, None, None]
        g = radial_cutoff(x, R0, R0 + 1.0, deriv=1)
        diff = eye - field.metric(x)
        return diff[..., None] * g[..., None, None, :] + (1 - c) * field.dmetric(x)

    def V(x):
        c = chi2(x)
        return c + (1 - c) * field.potential(x)

    def grad_V(x):
        c = chi2(x)[..., None]
        g = radial_cutoff(x, R0, R0 + 1.0, deriv=1)
        return g * (1 - field.potential(x))[..., None] + (1 - c) * field.dpotential(x)

    return SymbolField(d, a, V, c=min(1.0, field.c), R0=field.R0, R1=field.R1,
                       grad_a=grad_a, grad_V=grad_V, name=field.name + "_extended",
                       flat=field.flat, params=dict(field.params, extended=True))


def interval_operator(n=200, length=np.pi, V=1.0, order=2):
    """1D Dirichlet operator -d^2/dx^2 + V on (0, length) with n interior nodes."""
    from ..symbols import flat, potential

    Vf, gV = potential("constant", V)
    fld = flat(1, V=Vf, grad_V=gV)
    return assemble(fld, None, GridSpec(dim=1, interval=(0.0, length), n=n, order=order))


def l2_norm(P, u):
    return float(np.sqrt(P.cell_volume) * np.linalg.norm(u))


def gradient_form(P, u):
    """sum_j ||D_j u||^2 from the Dirichlet form <u, K u> (discrete L2)."""
    return float(np.real(np.vdot(u, P.kinetic @ u))) * P.cell_volume


def japanese_radius(P):
    return japanese(P.coords)
