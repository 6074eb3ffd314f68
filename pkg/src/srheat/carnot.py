"""Closed-form heat kernels and distances for the flat models.

Conventions: the operator is ``sum X_i^2`` (no factor 1/2) and kernels are
densities w.r.t. Lebesgue measure, which is the Haar measure here.

Heisenberg: ``X1 = d_x - (y/2) d_z``, ``X2 = d_y + (x/2) d_z`` with group law
``(x,y,z)(x',y',z') = (x+x', y+y', z+z' + (x y' - y x')/2)``.
Grushin: ``X1 = d_1``, ``X2 = x1 d_2``.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "euclidean_kernel",
    "heisenberg_kernel",
    "heisenberg_mul",
    "heisenberg_inv",
    "heisenberg_distance",
    "grushin_kernel",
]


def euclidean_kernel(t, x, y):
    x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
    n = x.shape[-1]
    d2 = np.sum((x - y) ** 2, axis=-1)
    return (4 * np.pi * t) ** (-n / 2) * np.exp(-d2 / (4 * t))


def heisenberg_mul(p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    return np.stack(
        [
            p[..., 0] + q[..., 0],
            p[..., 1] + q[..., 1],
            p[..., 2] + q[..., 2] + 0.5 * (p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]),
        ],
        axis=-1,
    )


def heisenberg_inv(p):
    return -np.asarray(p, float)


def _heis_origin(t, x, y, z):
    r2 = x * x + y * y

    def f(lam):
        if lam == 0.0:
            return 1.0 / (4 * np.pi * t) * np.exp(-r2 / (4 * t))
        lt = lam * t
        return lam / (4 * np.pi * np.sinh(lt)) * np.exp(-(lam / 4) * r2 / np.tanh(lt))

    return _cos_transform(f, z, 60.0 / t) / np.pi  # (1/2pi) * 2 * int_0^inf


def _cos_transform(f, z, upper):
    """``int_0^upper f(s) cos(z s) ds``; QAWO handles the oscillation when ``z`` is large."""
    if z == 0.0:
        val, _ = integrate.quad(f, 0.0, upper, limit=400, epsabs=1e-14, epsrel=1e-11)
    else:
        val, _ = integrate.quad(f, 0.0, upper, weight="cos", wvar=abs(z), limit=400, epsabs=1e-14, epsrel=1e-11)
    return val


def heisenberg_kernel(t, p, q=(0.0, 0.0, 0.0)):
    """``e(t, q, p)`` for the Heisenberg sub-Laplacian; ``p`` may be (..., 3)."""
    rel = heisenberg_mul(heisenberg_inv(q), p)
    flat = np.atleast_2d(rel)
    out = np.array([_heis_origin(t, *row) for row in flat])
    return out.reshape(np.shape(rel)[:-1]) if np.ndim(rel) > 1 else float(out[0])


def _mu(phi):
    s = np.sin(phi / 2)
    return (phi - np.sin(phi)) / (8 * s * s)


def heisenberg_distance(p, q=(0.0, 0.0, 0.0)):
    """Carnot-Caratheodory distance for the Heisenberg frame above."""
    x, y, z = heisenberg_mul(heisenberg_inv(q), p)
    z = abs(float(z))
    r = float(np.hypot(x, y))
    if z == 0:
        return r
    if r < 1e-12 * np.sqrt(z):
        # the vertical limit; the correction is O(r)
        return float(np.sqrt(4 * np.pi * z))
    target = z / (r * r)
    hi = 2 * np.pi - 1e-15
    phi = optimize.brentq(lambda s: _mu(s) - target, 1e-12, hi, xtol=1e-15, maxiter=500) \
        if target < _mu(hi) else hi
    return float(r * phi / (2 * np.sin(phi / 2)))


def grushin_kernel(t, x, y):
    """``e(t, x, y)`` for ``d_1^2 + x_1^2 d_2^2`` via the Mehler formula in the Fourier variable of ``x_2``."""
    x1, x2 = float(x[0]), float(x[1])
    y1, y2 = float(y[0]), float(y[1])

    def f(xi):
        if xi == 0.0:
            return np.exp(-((x1 - y1) ** 2) / (4 * t)) / np.sqrt(4 * np.pi * t)
        s = np.sinh(2 * xi * t)
        c = np.cosh(2 * xi * t)
        return np.sqrt(xi / (2 * np.pi * s)) * np.exp(-xi * ((x1 * x1 + y1 * y1) * c - 2 * x1 * y1) / (2 * s))

    return _cos_transform(f, x2 - y2, 80.0 / t) / np.pi
