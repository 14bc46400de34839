"""Piecewise-polynomial smooth steps and the cutoffs built from them.

All transitions use the order-K smoothstep, the unique polynomial of degree
2K+1 that rises from 0 to 1 on [0, 1] with K vanishing derivatives at both
ends.  Derivatives of every order are available in closed form.
"""
from functools import lru_cache
from math import comb

import numpy as np
from numpy.polynomial import Polynomial

DEFAULT_ORDER = 6


@lru_cache(maxsize=None)
def _smoothstep_poly(order, deriv):
    n = 2 * order + 1
    poly = Polynomial([0.0])
    t = Polynomial([0.0, 1.0])
    for j in range(order + 1, n + 1):
        poly = poly + comb(n, j) * t**j * (1 - t) ** (n - j)
    return poly.deriv(deriv) if deriv else poly


def smoothstep(t, deriv=0, order=DEFAULT_ORDER):
    """Order-``order`` smoothstep S(t) (or its ``deriv``-th derivative)."""
    t = np.asarray(t, dtype=float)
    poly = _smoothstep_poly(order, deriv)
    inside = (t > 0.0) & (t < 1.0)
    out = np.where(inside, poly(np.clip(t, 0.0, 1.0)), 0.0)
    if deriv == 0:
        # rounding in the monomial form can overshoot [0, 1] by ~1e-13
        out = np.clip(np.where(t >= 1.0, 1.0, out), 0.0, 1.0)
    return out


def rising(t, lo, hi, deriv=0, order=DEFAULT_ORDER):
    """0 for t <= lo, 1 for t >= hi, monotone in between."""
    width = hi - lo
    return smoothstep((np.asarray(t, dtype=float) - lo) / width, deriv, order) / width**deriv


def falling(t, lo, hi, deriv=0, order=DEFAULT_ORDER):
    """1 for t <= lo, 0 for t >= hi, monotone in between."""
    if deriv == 0:
        return 1.0 - rising(t, lo, hi, 0, order)
    return -rising(t, lo, hi, deriv, order)


def radial_cutoff(x, inner, outer, deriv=0):
    """Cutoff equal to 1 on |x| <= inner and 0 on |x| >= outer.

    With ``deriv=1`` returns the gradient, shape (..., d).
    """
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if deriv == 0:
        return falling(r, inner, outer)
    safe = np.where(r > 0, r, 1.0)
    return (falling(r, inner, outer, 1) / safe)[..., None] * x


class DyadicPartition:
    """Littlewood-Paley pair (psi, theta).

    ``chi`` equals 1 on |t| <= 1/2 and vanishes for |t| >= 1.  Then
    psi = chi and theta(t) = chi(t/2) - chi(t) is supported in
    1/2 <= |t| <= 2, and psi(t) + sum_{p<=P} theta(2^-p t) = chi(2^-(P+1) t)
    telescopes to 1 for |t| <= 2^P.
    """

    def __init__(self, order=DEFAULT_ORDER):
        self.order = order

    def chi(self, t, deriv=0):
        t = np.asarray(t, dtype=float)
        val = falling(np.abs(t), 0.5, 1.0, deriv, self.order)
        if deriv % 2 == 1:
            val = val * np.sign(t)
        return val

    def psi(self, t, deriv=0):
        return self.chi(t, deriv)

    def theta(self, t, deriv=0):
        t = np.asarray(t, dtype=float)
        return self.chi(t / 2.0, deriv) / 2.0**deriv - self.chi(t, deriv)
