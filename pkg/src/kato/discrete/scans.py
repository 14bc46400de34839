"""Scaling-law experiments: commutator norms against h and resolvent bounds."""
from dataclasses import dataclass
import json

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import SolveFailed, SpectrumNotCovered
from ..smooth import DyadicPartition
from .calculus import _spectral

VARIANTS = ("commutator", "derivative", "derivative_commutator", "quarter_commutator")
EXPECTED_SLOPE = {"commutator": 1.0, "derivative": -1.0, "derivative_commutator": 0.0,
                  "quarter_commutator": 0.5}
# short names accepted on the command line
VARIANT_ALIASES = {"L63i": "commutator", "L63ii": "derivative",
                   "L63iii": "derivative_commutator", "L82": "quarter_commutator"}


def canonical_variant(name):
    return VARIANT_ALIASES.get(name, name)


def derivative_matrix(P, axis=0):
    """Centred difference d/dx_axis on the unknowns (Dirichlet values zero)."""
    shape = P.shape
    lookup = -np.ones(int(np.prod(shape)), dtype=np.int64)
    lookup[P.index] = np.arange(P.n)
    lookup = lookup.reshape(shape)
    pos = np.array(np.unravel_index(P.index, shape))
    rows, cols, vals = [], [], []
    for step, sign in ((1, 1.0), (-1, -1.0)):
        q = pos.copy()
        q[axis] += step
        ok = (q[axis] >= 0) & (q[axis] < shape[axis])
        nb = np.full(P.n, -1)
        nb[ok] = lookup[tuple(q[:, ok])]
        ok = nb >= 0
        rows.append(np.flatnonzero(ok)); cols.append(nb[ok])
        vals.append(np.full(ok.sum(), sign / (2 * P.dx)))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(P.n, P.n))


def power_norm(apply, apply_t, n, seed=0, n_vectors=2, max_iter=400, rtol=1e-6):
    """Largest singular value by power iteration on A^T A from random starts."""
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_vectors):
        v = rng.normal(size=n)
        v /= np.linalg.norm(v)
        sigma = 0.0
        for _ in range(max_iter):
            w = apply_t(apply(v))
            nw = np.linalg.norm(w)
            if nw == 0:
                break
            v = w / nw
            new = np.sqrt(nw)
            if abs(new - sigma) <= rtol * new:
                sigma = new
                break
            sigma = new
        best = max(best, sigma)
    return best


@dataclass
class ScanResult:
    variant: str
    h: np.ndarray
    norms: np.ndarray
    slope: float
    intercept: float
    expected: float

    def to_dict(self):
        return {"variant": self.variant, "h": self.h.tolist(), "norms": self.norms.tolist(),
                "slope": self.slope, "intercept": self.intercept, "expected": self.expected}

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.h, self.norms]), delimiter=",",
                   header="h,norm", comments="")

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def commutator_scan(P, chi, theta=None, h_list=None, variant="commutator", chi0=None, seed=0):
    """Operator norms of the variant's operator for each h, and the fitted
    slope of log-norm against log h.

    commutator             [theta(h^2 P), chi]
    derivative             d_1 theta(h^2 P)
    derivative_commutator  d_1 [theta(h^2 P), chi]
    quarter_commutator     [theta(h^2 P), chi0 P^{1/4}]
    """
    variant = canonical_variant(variant)
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    theta = theta or DyadicPartition().theta
    h_list = np.asarray(h_list if h_list is not None else 2.0 ** -np.arange(3, 8), float)
    if h_list.size < 5:
        raise ValueError("at least 5 values of h are needed")
    sd = _spectral(P)
    if not sd.complete:
        raise SpectrumNotCovered("commutator scans need the full eigendecomposition")
    Vec, lam = sd.vectors, sd.values
    chi = np.asarray(chi, float)
    chi0 = chi if chi0 is None else np.asarray(chi0, float)
    D = derivative_matrix(P, 0)
    quarter = lam ** 0.25
    norms = []
    for h in h_list:
        th = theta(h * h * lam)
        keep = np.abs(th) > 0
        Vk, tk = Vec[:, keep], th[keep]

        def T(v):
            return Vk @ (tk * (Vk.T @ v))

        def P4(v):
            return Vec @ (quarter * (Vec.T @ v))

        if variant == "commutator":
            A = lambda v: T(chi * v) - chi * T(v)
            At = lambda w: chi * T(w) - T(chi * w)
        elif variant == "derivative":
            A = lambda v: D @ T(v)
            At = lambda w: T(D.T @ w)
        elif variant == "derivative_commutator":
            A = lambda v: D @ (T(chi * v) - chi * T(v))
            At = lambda w: chi * T(D.T @ w) - T(chi * (D.T @ w))
        else:
            # theta(h^2 P) commutes with P^{1/4}, so the operator is [T, chi0] P^{1/4}
            def A(v):
                q = P4(v)
                return T(chi0 * q) - chi0 * T(q)

            At = lambda w: P4(chi0 * T(w) - T(chi0 * w))
        norms.append(power_norm(A, At, P.n, seed=seed))
    norms = np.asarray(norms)
    slope, intercept = np.polyfit(np.log(h_list), np.log(norms), 1)
    return ScanResult(variant, h_list, norms, float(slope), float(intercept), EXPECTED_SLOPE[variant])


@dataclass
class ResolventReport:
    z: complex
    h: float
    u: np.ndarray
    norm_ratio: np.ndarray  # ||u|| |Im z| / ||f||, at most 1
    terms: np.ndarray  # rows: ||h^2 P u||^2, sum ||h D_j u||^2, ||h V^1/2 u||^2, ||u||^2
    constants: np.ndarray  # fitted C per f
    residual: float

    @property
    def max_constant(self):
        return float(np.max(self.constants))

    @property
    def bound_slack(self):
        """max(||u|| |Im z| - ||f||) / ||f||; the resolvent bound needs <= 0."""
        return float(np.max(self.norm_ratio) - 1.0)

    def to_dict(self):
        return {"z": [self.z.real, self.z.imag], "h": self.h,
                "max_norm_ratio": float(np.max(self.norm_ratio)),
                "bound_slack": self.bound_slack, "max_C": self.max_constant,
                "residual": self.residual}


def resolvent_check(P, z, h, f):
    """Solve (h^2 P - z) u = f for each column of f and evaluate the resolvent
    bounds.  Gradient terms come from the Dirichlet form <u, K u>."""
    z = complex(z)
    if z.imag == 0:
        raise ValueError("Im z must be nonzero")
    F = np.asarray(f, dtype=complex)
    vec = F.ndim == 1
    F2 = F[:, None] if vec else F
    h2 = float(h) ** 2
    A = (h2 * P.matrix - z * sp.identity(P.n)).tocsc().astype(complex)
    try:
        U = splu(A).solve(F2)
    except RuntimeError as exc:
        raise SolveFailed(str(exc), witness=z) from exc
    res = float(np.max(np.linalg.norm(A @ U - F2, axis=0) / np.linalg.norm(F2, axis=0)))
    if not np.isfinite(res) or res > 1e-8:
        raise SolveFailed(f"relative residual {res:.2e}", witness=z)
    fn = np.linalg.norm(F2, axis=0)
    un = np.linalg.norm(U, axis=0)
    PU = P.matrix @ U
    KU = P.kinetic @ U
    terms = np.vstack([
        np.linalg.norm(h2 * PU, axis=0) ** 2,
        h2 * np.real(np.sum(U.conj() * KU, axis=0)),
        h2 * np.sum(P.potential[:, None] * np.abs(U) ** 2, axis=0),
        un ** 2,
    ])
    jz = 1.0 + abs(z) ** 2  # <|z|>^2
    C = terms.sum(axis=0) * z.imag**2 / (jz * fn**2)
    return ResolventReport(z, float(h), U[:, 0] if vec else U, un * abs(z.imag) / fn,
                           terms, C, res)
