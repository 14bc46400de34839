"""Escape symbols e0, lambda, Phi, lambda1 = Phi^2 lambda and their Hamilton
derivatives.

Every symbol comes with an analytic H_p obtained from the chain rule and the
basic brackets

    H<x>  = 2a/<x>,          H|x|   = 2a/|x|,
    H|xi| = -(xi.dA.xi).xi/|xi|,
    Ha    = 2 A xi.(A xi + x.dA.xi) - (xi.dA.xi).A x,

where a(x, xi) = x.A(x) xi.  A generic finite-difference Hamilton derivative
is provided for cross-checks.
"""
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .errors import DerivativeUnstable, InequalityViolated
from .smooth import falling, rising
from .symbols import japanese


@dataclass(frozen=True)
class EscapeParams:
    delta: float = 0.1
    epsilon: Optional[float] = None  # default delta / 10
    rho: float = 0.2
    nu: float = 0.1
    M0: float = 10.0
    R0: float = 1.0
    xi0_norm: float = 1.0

    def __post_init__(self):
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", self.delta / 10.0)
        if not (0 < self.epsilon < self.delta):
            raise ValueError("need 0 < epsilon < delta")
        if self.rho <= 0 or self.M0 < 1 or self.nu <= 0:
            raise ValueError("need rho > 0, M0 >= 1, nu > 0")


class CutoffFamily:
    """psi, psi0, psi1, chi and phi1..phi3 for a given EscapeParams."""

    def __init__(self, params):
        self.p = params

    def psi(self, t, deriv=0):
        e = self.p.epsilon
        return rising(t, e, 2 * e, deriv)

    def psi0(self, t, deriv=0):
        t = np.asarray(t, float)
        if deriv == 0:
            return 1.0 - self.psi(t) - self.psi(-t)
        return -self.psi(t, 1) + self.psi(-t, 1)

    def psi1(self, t, deriv=0):
        t = np.asarray(t, float)
        if deriv == 0:
            return self.psi(-t) - self.psi(t)
        return -self.psi(-t, 1) - self.psi(t, 1)

    def chi(self, t, deriv=0):
        return falling(t, self.p.rho / 2, self.p.rho, deriv)

    def phi1(self, s, deriv=0):
        return rising(s, self.p.R0, 2.5 * self.p.R0, deriv)

    def phi2(self, s, deriv=0):
        d = self.p.delta
        return falling(s, -d, -d / 2, deriv)

    def phi3(self, s, deriv=0):
        n = self.p.xi0_norm
        return rising(s, n / 4, n / 2, deriv)


# --------------------------------------------------------------------------
# basic symbols and brackets
# --------------------------------------------------------------------------

def incoming_symbol_a(field, x, xi):
    """a(x, xi) = sum a^{jk}(x) x_j xi_k."""
    x, xi = np.asarray(x, float), np.asarray(xi, float)
    return np.einsum("...j,...jk,...k->...", x, field.metric(x), xi)


def e0(field, x, xi):
    return incoming_symbol_a(field, x, xi) / japanese(xi)


@dataclass
class _Brackets:
    a: np.ndarray
    Ha: np.ndarray
    p: np.ndarray
    rx: np.ndarray
    rxi: np.ndarray
    jx: np.ndarray
    jxi: np.ndarray
    Hrxi: np.ndarray  # H|xi|


def _brackets(field, x, xi):
    x, xi = np.asarray(x, float), np.asarray(xi, float)
    A = field.metric(x)
    dA = field.dmetric(x)
    Axi = np.einsum("...jk,...k->...j", A, xi)
    Ax = np.einsum("...jk,...k->...j", A, x)
    dpx = np.einsum("...j,...jkl,...k->...l", xi, dA, xi)  # d_x p
    xdAxi = np.einsum("...j,...jkl,...k->...l", x, dA, xi)  # d_x of a with A frozen
    a = np.sum(x * Axi, axis=-1)
    p = np.sum(xi * Axi, axis=-1)
    Ha = np.sum(2 * Axi * (Axi + xdAxi), axis=-1) - np.sum(dpx * Ax, axis=-1)
    rxi = np.linalg.norm(xi, axis=-1)
    safe = np.where(rxi > 0, rxi, 1.0)
    Hrxi = -np.sum(dpx * xi, axis=-1) / safe
    return _Brackets(a, Ha, p, np.linalg.norm(x, axis=-1), rxi, japanese(x), japanese(xi), Hrxi)


def hamilton_derivative(field, f, x, xi, steps=(1e-6, 1e-7, 1e-8), rel_tol=1e-3):
    """H_p f at (x, xi) by central differences along the Hamilton vector.

    Each point takes the first relative step whose one-step Richardson
    estimate agrees with the plain central difference to ``rel_tol``
    (relative to max(|value|, 1)); DerivativeUnstable if none does.
    """
    x, xi = np.asarray(x, float), np.asarray(xi, float)
    vx, vxi = field.hamilton_vector(x, xi)
    scale = np.sqrt(np.sum(vx**2, -1) + np.sum(vxi**2, -1))
    base = (1 + np.linalg.norm(x, axis=-1) + np.linalg.norm(xi, axis=-1)) / np.maximum(scale, 1e-300)
    base = np.asarray(base)[..., None]

    def central(hh):
        return (f(x + hh * vx, xi + hh * vxi) - f(x - hh * vx, xi - hh * vxi)) / (2 * hh[..., 0])

    out = np.full(np.shape(base)[:-1], np.nan)
    for step in steps:
        h = step * base
        d1, d2 = central(h), central(h / 2)
        val = (4 * d2 - d1) / 3
        ok = np.abs(d2 - d1) <= rel_tol * np.maximum(np.abs(val), 1.0)
        out = np.where(np.isnan(out) & ok, val, out)
        if not np.isnan(out).any():
            return out
    raise DerivativeUnstable("finite-difference Hamilton derivative did not settle",
                             witness=int(np.count_nonzero(np.isnan(out))))


def hamilton_e0(field, x, xi):
    """H_p e0 (analytic)."""
    b = _brackets(field, x, xi)
    Hjxi = b.rxi / b.jxi * b.Hrxi
    return b.Ha / b.jxi - b.a * Hjxi / b.jxi**2


# --------------------------------------------------------------------------
# lambda and Phi
# --------------------------------------------------------------------------

def lambda_symbol(params, cutoffs, field, x, xi, with_derivative=False):
    """Escape symbol lambda built on e0; optionally also H_p lambda."""
    b = _brackets(field, x, xi)
    e = b.a / b.jxi
    q = e / b.jx
    je = np.sqrt(1 + e * e)
    M = params.M0 - je ** (-params.nu)
    psi0, psi1 = cutoffs.psi0(q), cutoffs.psi1(q)
    G = q * psi0 - M * psi1
    sp = np.sqrt(np.maximum(b.p, 1e-300))
    w = b.jx / sp
    chi = cutoffs.chi(w)
    lam = -G * chi
    if not with_derivative:
        return lam
    Hjxi = b.rxi / b.jxi * b.Hrxi
    He = b.Ha / b.jxi - b.a * Hjxi / b.jxi**2
    Hjx = 2 * b.a / b.jx
    Hq = He / b.jx - e * Hjx / b.jx**2
    Gq = psi0 + q * cutoffs.psi0(q, 1) - M * cutoffs.psi1(q, 1)
    Ge = -params.nu * e * je ** (-params.nu - 2) * psi1
    Hw = Hjx / sp  # H p = 0
    Hlam = -(Gq * Hq + Ge * He) * chi - G * cutoffs.chi(w, 1) * Hw
    return lam, Hlam


def phi_symbol(params, cutoffs, field, x, xi, with_derivative=False):
    """Phi = phi1(|x|) phi2(a/(|x||xi|)) phi3(|xi|); optionally also H_p Phi
    split into its three chain-rule terms."""
    b = _brackets(field, x, xi)
    rx = np.where(b.rx > 0, b.rx, 1.0)
    rxi = np.where(b.rxi > 0, b.rxi, 1.0)
    s = b.a / (rx * rxi)
    f1, f2, f3 = cutoffs.phi1(b.rx), cutoffs.phi2(s), cutoffs.phi3(b.rxi)
    Phi = np.where(b.rxi > 0, f1 * f2 * f3, 0.0)
    if not with_derivative:
        return Phi
    Hrx = 2 * b.a / rx
    Hs = (b.Ha - b.a * Hrx / rx) / (rx * rxi) - s * b.Hrxi / rxi
    t1 = cutoffs.phi1(b.rx, 1) * Hrx * f2 * f3
    t2 = f1 * cutoffs.phi2(s, 1) * Hs * f3
    t3 = f1 * f2 * cutoffs.phi3(b.rxi, 1) * b.Hrxi
    return Phi, (t1, t2, t3)


def lambda1_symbol(params, cutoffs, field, x, xi, with_derivative=False):
    lam = lambda_symbol(params, cutoffs, field, x, xi, with_derivative)
    Phi = phi_symbol(params, cutoffs, field, x, xi, with_derivative)
    if not with_derivative:
        return Phi**2 * lam
    (lam, Hlam), (Phi, terms) = lam, Phi
    HPhi = sum(terms)
    return Phi**2 * lam, 2 * Phi * lam * HPhi + Phi**2 * Hlam


# --------------------------------------------------------------------------
# grid verification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EscapeGrid:
    """Polar grid in x and xi: (|x|, x-angle, |xi|, xi-angle)."""

    n_rx: int = 64
    n_ax: int = 64
    n_rxi: int = 32
    n_axi: int = 32
    rx_range: tuple = (1.0, 10.0)
    rxi_range: tuple = (0.25, 8.0)

    @classmethod
    def covering(cls, params, shape=(64, 64, 32, 32)):
        """Grid over R0 <= |x| <= 10 R0 and |xi0|/4 <= |xi| <= xi_max, with
        xi_max large enough to reach the support of lambda (<x>/|xi| < rho)."""
        n = params.xi0_norm
        rx_hi = 10 * params.R0
        xi_hi = max(8 * n, 2 * np.sqrt(1 + rx_hi**2) / params.rho)
        return cls(*shape, (params.R0, rx_hi), (n / 4, xi_hi))

    def chunks(self):
        rxs = np.linspace(*self.rx_range, self.n_rx)
        axs = np.linspace(0, 2 * np.pi, self.n_ax, endpoint=False)
        rxis = np.geomspace(*self.rxi_range, self.n_rxi)
        axis = np.linspace(0, 2 * np.pi, self.n_axi, endpoint=False) + np.pi / self.n_axi
        AX, RXI, AXI = np.meshgrid(axs, rxis, axis, indexing="ij")
        AX, RXI, AXI = AX.ravel(), RXI.ravel(), AXI.ravel()
        xi = np.stack([RXI * np.cos(AXI), RXI * np.sin(AXI)], axis=-1)
        for r in rxs:
            x = np.stack([r * np.cos(AX), r * np.sin(AX)], axis=-1)
            yield x, xi

    @property
    def size(self):
        return self.n_rx * self.n_ax * self.n_rxi * self.n_axi


@dataclass
class EscapeReport:
    hphi_sign_margin: float
    lambda_sign_margin: float
    escape_C: float
    escape_Cprime: float
    escape_Cprime_min: float
    min_residual: float
    e0_growth_margin: float
    n_points: int
    n_supp_lambda: int
    n_supp_phi: int
    max_abs_lambda1: float
    witness_iv: Optional[list] = None
    witness_v: Optional[list] = None

    @property
    def passed(self):
        return self.hphi_sign_margin >= 0 and self.lambda_sign_margin >= 0 and self.escape_C > 0

    def to_dict(self):
        return asdict(self)


def check_escape_inequalities(params, cutoffs, field, grid=None, Cprime_floor=1e-3,
                              round_rel=1e-12, e0_bound=(1.0, 1.0)):
    """Sign conditions and a fitted (C, C') for
    -H lambda1 >= C <x>^{-1-nu} Phi^2 (|x| + |xi|) - C' Phi^2.

    C' is set to twice the smallest admissible value (floored at
    ``Cprime_floor``) and C is the largest value compatible with it.  Values
    of H Phi within ``round_rel`` of the size of its chain-rule terms are
    treated as zero.
    """
    if grid is None:
        grid = EscapeGrid.covering(params)
    C0, C1 = e0_bound
    iv_margin, v_margin = np.inf, np.inf
    wit_iv = wit_v = None
    ratios = []  # (y/B, A/B) on supp Phi
    n_lam = n_phi = 0
    max_l1 = 0.0
    l72 = np.inf
    for x, xi in grid.chunks():
        lam, Hlam = lambda_symbol(params, cutoffs, field, x, xi, True)
        Phi, terms = phi_symbol(params, cutoffs, field, x, xi, True)
        HPhi = sum(terms)
        scale = sum(np.abs(t) for t in terms)
        HPhi = np.where(np.abs(HPhi) <= round_rel * scale, 0.0, HPhi)
        jx = japanese(x)
        supp_lam = cutoffs.chi(jx / np.sqrt(field.p(x, xi))) > 0
        n_lam += int(supp_lam.sum())
        if supp_lam.any():
            m = -HPhi[supp_lam]
            i = int(np.argmin(m))
            if m[i] < iv_margin:
                iv_margin = float(m[i])
                wit_iv = [x[supp_lam][i].tolist(), xi[supp_lam][i].tolist()]
        sp = Phi > 0
        n_phi += int(sp.sum())
        if sp.any():
            m = lam[sp]
            i = int(np.argmin(m))
            if m[i] < v_margin:
                v_margin = float(m[i])
                wit_v = [x[sp][i].tolist(), xi[sp][i].tolist()]
            # y / Phi^2 with y = -H lambda1 = -Phi^2 H lambda - 2 Phi lambda H Phi
            yB = -Hlam[sp] - 2 * lam[sp] * HPhi[sp] / Phi[sp]
            AB = jx[sp] ** (-1 - params.nu) * (np.linalg.norm(x[sp], axis=-1)
                                               + np.linalg.norm(xi[sp], axis=-1))
            ratios.append((yB, AB))
            max_l1 = max(max_l1, float(np.max(np.abs(Phi[sp] ** 2 * lam[sp]))))
        # growth bound for e0 on 0.1 <= |xi| <= 10
        rxi = np.linalg.norm(xi, axis=-1)
        sel = (rxi >= 0.1) & (rxi <= 10)
        if sel.any():
            l72 = min(l72, float(np.min(hamilton_e0(field, x[sel], xi[sel]) - C0 * rxi[sel] + C1)))
    if not ratios:
        raise InequalityViolated("grid does not meet the support of Phi")
    yB = np.concatenate([r[0] for r in ratios])
    AB = np.concatenate([r[1] for r in ratios])
    Cp_min = max(0.0, float(np.max(-yB)))
    Cp = 2.0 * max(Cp_min, Cprime_floor)
    C = float(np.min((yB + Cp) / AB))
    if not C > 0:
        raise InequalityViolated("no positive C for the lower bound on -H lambda1",
                                 witness=float(C))
    residual = float(np.min(yB + Cp - C * AB))
    return EscapeReport(iv_margin if np.isfinite(iv_margin) else 0.0,
                        v_margin if np.isfinite(v_margin) else 0.0,
                        C, Cp, Cp_min, residual, l72, grid.size, n_lam, n_phi, max_l1,
                        wit_iv, wit_v)
