"""Dawson's integral, its maximum, its primitive, and the exponent threshold beta*."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import ContractError

__all__ = ["DawsonMax", "dawson", "dawson_max", "beta_star", "F_unit", "F_UNIT_CONST",
           "F_UNIT_CROSSOVER"]

# F_unit(z) - log(z)/2 -> (euler_gamma + log 4)/4 as z -> inf.  The limit follows from
# the Laplace-transform representation of D, so nothing is fitted.
F_UNIT_CONST = (np.euler_gamma + math.log(4.0)) / 4.0

# beyond this |z| the asymptotic series is used; its first neglected term is ~1e-17 here
F_UNIT_CROSSOVER = 50.0

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


def dawson(z):
    """Dawson's integral ``D(z) = exp(-z^2) int_0^z exp(y^2) dy``.

    Parameters
    ----------
    z : float or array_like
        Finite real argument(s).

    Returns
    -------
    float or ndarray
    """
    za = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(za)):
        raise ContractError("dawson requires finite arguments")
    out = special.dawsn(za)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DawsonMax:
    """Location and value of the global maximum of ``D`` on ``[0, inf)``."""

    z_star: float
    d_max: float


@lru_cache(maxsize=1)
def dawson_max() -> DawsonMax:
    """Locate the maximum of Dawson's integral.

    A coarse grid brackets the maximizer; the root of ``D'(z) = 1 - 2 z D(z)``
    inside that bracket is then refined by Brent's method.
    """
    grid = np.linspace(0.0, 3.0, 301)
    i = int(np.argmax(special.dawsn(grid)))
    lo, hi = grid[max(i - 1, 1)], grid[min(i + 1, grid.size - 1)]
    z = optimize.brentq(lambda t: 1.0 - 2.0 * t * special.dawsn(t), lo, hi, xtol=1e-15, rtol=1e-15)
    return DawsonMax(z_star=float(z), d_max=float(special.dawsn(z)))


def beta_star(params) -> float:
    """Threshold ``beta / (8 D_max^2)`` below which ``beta0`` must lie."""
    return params.beta / (8.0 * dawson_max().d_max ** 2)


def _panel(a, b):
    # a and b carry a trailing length-1 axis
    x = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
    return 0.5 * (b - a)[..., 0] * np.sum(_GL_W * special.dawsn(x), axis=-1)


@lru_cache(maxsize=1)
def _cumulative_table():
    # cum[j] = int_0^j D for j = 0..50 on unit panels
    j = np.arange(int(F_UNIT_CROSSOVER), dtype=float)
    panels = _panel(j[:, None], j[:, None] + 1.0)
    return np.concatenate([[0.0], np.cumsum(panels)])


def _F_asymptotic(z):
    w = 1.0 / (z * z)
    series = w * (1.0 / 8 + w * (3.0 / 32 + w * (5.0 / 32 + w * (105.0 / 256))))
    return 0.5 * np.log(z) + F_UNIT_CONST - series


def F_unit(z):
    """Primitive ``int_0^z D(y) dy`` of Dawson's integral (an even function).

    Uses a tabulated Gauss-Legendre quadrature for ``|z| <= 50`` and the
    expansion ``log(z)/2 + C - 1/(8z^2) - 3/(32z^4) - ...`` beyond.
    """
    za = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(za)):
        raise ContractError("F_unit requires finite arguments")
    a = np.abs(za)
    out = np.empty_like(a)
    near = a <= F_UNIT_CROSSOVER
    if np.any(near):
        an = a[near]
        table = _cumulative_table()
        j = np.floor(an)
        out[near] = table[j.astype(int)] + _panel(j[..., None], an[..., None])
    far = ~near
    if np.any(far):
        out[far] = _F_asymptotic(a[far])
    return float(out) if out.ndim == 0 else out
