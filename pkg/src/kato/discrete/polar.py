"""Exterior of a disk for the flat Laplacian, separated in angular modes.

With u = sum_m r^{-1/2} w_m(r) e^{i m phi} the operator -Delta + V0 acts on each
w_m as -w'' + (m^2 - 1/4) r^{-2} w + V0 w, a symmetric tridiagonal matrix on a
uniform radial grid with Dirichlet ends at r = R and r = R_out.  The L2 norm
is 2 pi sum_m int |w_m|^2 dr, so everything stays in plain Euclidean algebra.
Radial cutoffs commute with the mode decomposition, which makes exact time
integrals of filtered, localised energies cheap.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import eigh_tridiagonal

from ..errors import SpectrumNotCovered


@dataclass
class PolarExterior:
    R: float = 1.0
    R_out: float = 12.0
    dr: float = 2e-3
    V0: float = 1.0
    kdr: Optional[float] = None  # if set, scans use dr = kdr / sqrt(top of band)

    def for_band(self, hi):
        if self.kdr is None:
            return self
        return replace(self, dr=self.kdr / np.sqrt(hi), kdr=None)

    @property
    def r(self):
        n = int(round((self.R_out - self.R) / self.dr)) - 1
        return self.R + self.dr * np.arange(1, n + 1)

    def mode_matrix(self, m):
        """(diagonal, off-diagonal) of the radial operator for |m|."""
        r = self.r
        d = 2.0 / self.dr**2 + (m * m - 0.25) / r**2 + self.V0
        e = np.full(r.size - 1, -1.0 / self.dr**2)
        return d, e

    def band(self, m, lo, hi):
        """Eigenpairs of mode |m| with eigenvalues in (lo, hi].

        Not cached: at small h the band vectors of all modes together would
        not fit in memory.
        """
        d, e = self.mode_matrix(abs(int(m)))
        if d.min() - 2 * abs(e[0]) > hi:
            return np.zeros(0), np.zeros((d.size, 0))
        return eigh_tridiagonal(d, e, select="v", select_range=(lo, hi), lapack_driver="stemr")

    def decompose(self, f, n_phi):
        """Angular modes of the function f(x) (x of shape (..., 2)) sampled on
        the radial grid.  Returns (m values, w_m(r) array of shape (M, n_r))."""
        r = self.r
        phi = 2 * np.pi * np.arange(n_phi) / n_phi
        X = np.stack([r[:, None] * np.cos(phi)[None, :], r[:, None] * np.sin(phi)[None, :]], -1)
        vals = f(X)  # (n_r, n_phi)
        c = np.fft.fft(vals, axis=1) / n_phi  # u = sum_m c_m e^{i m phi}
        m = np.fft.fftfreq(n_phi, 1.0 / n_phi).astype(int)
        w = (np.sqrt(r)[:, None] * c).T
        return m, w

    def norm2(self, w):
        return float(2 * np.pi * np.sum(np.abs(w) ** 2))

    def synthesize(self, m, w, points):
        """u at Cartesian points from modes (linear interpolation in r)."""
        points = np.asarray(points, float)
        rr = np.hypot(points[..., 0], points[..., 1])
        ph = np.arctan2(points[..., 1], points[..., 0])
        r = np.r_[self.R, self.r, self.R_out]
        out = np.zeros(rr.shape, dtype=complex)
        for mk, wk in zip(m, w):
            c = np.r_[0.0, wk, 0.0] / np.sqrt(r)
            val = np.interp(rr, r, c.real) + 1j * np.interp(rr, r, c.imag)
            out += val * np.exp(1j * mk * ph)
        return np.where(rr >= self.R, out, 0.0)


def significant_modes(m, w, rel=1e-14):
    e = np.sum(np.abs(w) ** 2, axis=1)
    keep = e > rel * e.sum()
    return m[keep], w[keep]


def _time_kernel(lam, T):
    """E_kl = int_0^T exp(i t (lam_k - lam_l)) dt."""
    d = lam[:, None] - lam[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        E = (np.exp(1j * T * d) - 1.0) / (1j * d)
    E[np.abs(d) * T < 1e-12] = T
    return E


def filtered_energy_integrals(op, m, w, pairs, lo, hi, T):
    """For each (weight, filt) in ``pairs``:
    int_0^T || weight(r) * filt(P) e^{itP} u ||^2 dt, exactly in time.

    ``filt(lam)`` must vanish outside (lo, hi]; ``weight`` is a radial
    function evaluated on op.r.  Also returns the band mass of u.  One
    eigen-solve per mode serves all pairs.
    """
    wr = [weight(op.r) for weight, _ in pairs]
    totals = np.zeros(len(pairs))
    mass = 0.0
    m = np.asarray(m)
    for am in np.unique(np.abs(m)):
        # m and -m share the radial operator
        rows = np.flatnonzero(np.abs(m) == am)
        lam, V = op.band(am, lo, hi)
        if lam.size == 0:
            continue
        C = V.T @ w[rows].T  # (n_band, len(rows))
        mass += 2 * np.pi * float(np.sum(np.abs(C) ** 2))
        E = _time_kernel(lam, T)
        for i, (_, filt) in enumerate(pairs):
            A = filt(lam)[:, None] * C
            supp = np.flatnonzero(wr[i] > 0)
            Vs = V[supp] * wr[i][supp, None]
            K = (Vs.T @ Vs) * E
            totals[i] += 2 * np.pi * float(np.real(np.sum(np.conj(A) * (K @ A))))
    return totals, mass / op.norm2(w)


def filtered_energy_integral(op, m, w, weight, filt, lo, hi, T):
    return filtered_energy_integrals(op, m, w, [(weight, filt)], lo, hi, T)[0][0]


def band_mass(op, m, w, lo, hi):
    """Fraction of ||u||^2 carried by eigenvalues in (lo, hi]."""
    inside = 0.0
    for mk, wk in zip(m, w):
        lam, V = op.band(mk, lo, hi)
        if lam.size:
            inside += 2 * np.pi * float(np.sum(np.abs(V.T @ wk) ** 2))
    return inside / op.norm2(w)


def evolve_modes(op, m, w, t, lo, hi):
    """Band-limited e^{itP} u: modes of the part of u with spectrum in (lo, hi]."""
    out = np.zeros_like(w, dtype=complex)
    for i, (mk, wk) in enumerate(zip(m, w)):
        lam, V = op.band(mk, lo, hi)
        if lam.size:
            out[i] = V @ (np.exp(1j * t * lam) * (V.T @ wk))
    return out


def require_band(op, lo, hi, m_max):
    """The radial grid must resolve the band: k dr <= 0.5 at the top."""
    if np.sqrt(hi) * op.dr > 0.5:
        raise SpectrumNotCovered(f"dr = {op.dr:.3g} too coarse for eigenvalues up to {hi:.4g}")
