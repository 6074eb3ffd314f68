"""Nilpotent approximation, damped fields and the coercivity scan."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.stats import qmc

from .charts import push_field
from .errors import EmptyLowestPart, NonpositiveDensity, StencilOverflow
from .flag import exact_point, sr_pseudo_norm
from .polynomials import (
    MultiPoly,
    PolyVectorField,
    Weights,
    as_fraction,
    dilate_pullback,
    graded_parts,
    lie_bracket,
)

__all__ = [
    "NilpotentStructure",
    "nilpotentize",
    "nilpotentize_measure",
    "check_divergence_free",
    "hat_operator_apply",
    "CutoffSpec",
    "DampedField",
    "damped_field",
    "damping_rate_fit",
    "hormander_coercivity",
    "bracket_closure",
    "default_gamma",
]


@dataclass(frozen=True)
class NilpotentStructure:
    dim: int
    weights: Weights
    hat_fields: tuple
    hat_drift: PolyVectorField | None = None
    drift_degree: int | None = None
    measure_constant: float = 1.0
    jacobian_at_base: Fraction = Fraction(1)
    pushed_fields: tuple = field(default=(), repr=False, compare=False)
    pushed_drift: PolyVectorField | None = field(default=None, repr=False, compare=False)

    @property
    def r(self):
        return max(self.weights)

    @property
    def Q(self):
        return sum(self.weights)

    def to_json(self):
        out = {
            "dim": self.dim,
            "weights": list(self.weights),
            "hat_fields": [X.to_json() for X in self.hat_fields],
            "hat_fields_text": [X.to_str() for X in self.hat_fields],
            "measure_constant": float(self.measure_constant),
            "jacobian_at_base": str(self.jacobian_at_base),
        }
        if self.hat_drift is not None:
            out["hat_drift"] = self.hat_drift.to_json()
            out["drift_degree"] = self.drift_degree
        return out


def nilpotentize(fields, drift=None, chart=None, drift_in_D2=False, density=None):
    """Lowest weighted-degree parts of ``fields`` (and ``drift``) in ``chart``.

    In privileged coordinates no part below degree -1 exists; if one shows up
    the chart was not privileged and :class:`EmptyLowestPart` is not the
    right diagnosis, so a ``ValueError`` is raised instead.
    """
    w = chart.weights
    r = max(w)
    hats, pushed = [], []
    for i, X in enumerate(fields):
        P = push_field(chart, X)
        pushed.append(P)
        parts = graded_parts(P, w, -r, -1)
        low = [k for k in parts if k < -1]
        if low:
            raise ValueError(f"field {i} has a part of degree {low[0]} < -1; chart is not privileged")
        if -1 not in parts:
            raise EmptyLowestPart(f"field {i} has no degree -1 part at the base point")
        hats.append(parts[-1])
    hat_drift = pushed_drift = deg = None
    if drift is not None and not drift.is_zero():
        pushed_drift = push_field(chart, drift)
        deg = -2 if drift_in_D2 else -1
        parts = graded_parts(pushed_drift, w, -r, deg)
        low = [k for k in parts if k < deg]
        if low:
            raise ValueError(
                f"drift has a part of degree {low[0]} < {deg}; it is not a section of D^{-deg}"
            )
        hat_drift = parts.get(deg, PolyVectorField.zero(chart.dim))
    h = 1.0 if density is None else nilpotentize_measure(density, chart.base_point)
    return NilpotentStructure(
        dim=chart.dim,
        weights=w,
        hat_fields=tuple(hats),
        hat_drift=hat_drift,
        drift_degree=deg,
        measure_constant=h,
        jacobian_at_base=abs(chart.jacobian_det_at_base()),
        pushed_fields=tuple(pushed),
        pushed_drift=pushed_drift,
    )


def nilpotentize_measure(density, point):
    """``h(q)``: the nilpotentized measure is ``h(q)`` times Lebesgue in the chart."""
    try:
        q = exact_point(point, density.dim)
        v = density.evaluate(q)
    except TypeError:
        v = density.evaluate(list(point))
    if v <= 0:
        raise NonpositiveDensity(f"density is {v} at {tuple(point)}")
    return v


def check_divergence_free(S):
    """Exact Lebesgue divergence of every hat field. Returns ``(ok, residuals)``."""
    res = [X.divergence() for X in S.hat_fields]
    return all(p.is_zero() for p in res), res


def hat_operator_apply(S, f, grid_h=None):
    """Apply ``sum X_i^2`` (plus the hat drift, if any).

    With a MultiPoly this is exact. With an ndarray ``f`` sampled on a
    uniform grid, ``grid_h`` must be ``(lo, h)`` per axis; centred differences
    are applied twice and the result covers interior nodes only (two nodes
    trimmed on each side).
    """
    if isinstance(f, MultiPoly):
        out = MultiPoly.zero(f.dim)
        for X in S.hat_fields:
            out = out + X.apply(X.apply(f))
        if S.hat_drift is not None:
            out = out + S.hat_drift.apply(f)
        return out
    f = np.asarray(f, dtype=float)
    if grid_h is None:
        raise ValueError("grid functions need grid_h=(lo, h)")
    lo, h = grid_h
    lo = np.broadcast_to(np.asarray(lo, float), (f.ndim,))
    h = np.broadcast_to(np.asarray(h, float), (f.ndim,))
    if f.ndim != S.dim:
        raise StencilOverflow("grid dimension does not match the structure")
    if any(s < 5 for s in f.shape):
        raise StencilOverflow("grid too small for a two-step centred stencil")
    axes = [lo[j] + h[j] * np.arange(f.shape[j]) for j in range(f.ndim)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def apply(V, g, Xpts):
        # g lives on the grid cropped by `crop` on each side; output crops one more
        coef = V.lambdify()(Xpts[(slice(1, -1),) * f.ndim])
        out = 0.0
        for j in range(f.ndim):
            sl_p = [slice(1, -1)] * f.ndim
            sl_m = [slice(1, -1)] * f.ndim
            sl_p[j] = slice(2, None)
            sl_m[j] = slice(None, -2)
            out = out + coef[..., j] * (g[tuple(sl_p)] - g[tuple(sl_m)]) / (2 * h[j])
        return out

    total = 0.0
    inner = X[(slice(1, -1),) * f.ndim]
    for V in S.hat_fields:
        total = total + apply(V, apply(V, f, X), inner)
    if S.hat_drift is not None:
        total = total + apply(S.hat_drift, f, X)[(slice(1, -1),) * f.ndim]
    return total


# --- damped fields -----------------------------------------------------------

def _g(u):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)


@dataclass(frozen=True)
class CutoffSpec:
    """Radial cutoff in the sR pseudo-norm: 1 inside ``R1``, 0 outside ``R2``.

    ``profile="smooth"`` is the C-infinity smoothstep built from ``exp(-1/u)``;
    ``profile="bump"`` uses ``exp(1 - 1/(1 - u^2))`` on the transition layer.
    """

    R1: float = 1.0
    R2: float = 2.0
    profile: str = "smooth"

    def __post_init__(self):
        if not 0 < self.R1 < self.R2:
            raise ValueError("need 0 < R1 < R2")
        if self.profile not in ("smooth", "bump"):
            raise ValueError(f"unknown cutoff profile {self.profile!r}")

    def __call__(self, x, w):
        s = sr_pseudo_norm(x, w)
        u = np.clip((s - self.R1) / (self.R2 - self.R1), 0.0, 1.0)
        if self.profile == "smooth":
            a, b = _g(1.0 - u), _g(u)
            return a / (a + b)
        with np.errstate(divide="ignore"):
            inner = np.where(u < 1, 1.0 - 1.0 / np.where(u < 1, 1.0 - u * u, 1.0), -np.inf)
        return np.exp(inner)


def default_gamma(r):
    return 1.0 / (2 * r * (r + 1))


@dataclass(frozen=True)
class DampedField:
    """``Y = Xhat + chi(delta_{|eps|^gamma} x) (X^eps - Xhat)``, evaluated pointwise."""

    gamma: float
    eps: float
    hat: PolyVectorField
    correction: PolyVectorField  # X^eps - Xhat
    weights: Weights
    cutoff: CutoffSpec = CutoffSpec()

    def cutoff_values(self, x):
        x = np.asarray(x, dtype=float)
        s = abs(self.eps) ** self.gamma
        return self.cutoff(x * np.power(s, np.asarray(self.weights, float)), self.weights)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        chi = self.cutoff_values(x)
        return self.hat.lambdify()(x) + chi[..., None] * self.correction.lambdify()(x)

    __call__ = evaluate

    def deviation(self, x):
        """``Y - Xhat`` at ``x``."""
        x = np.asarray(x, dtype=float)
        return self.cutoff_values(x)[..., None] * self.correction.lambdify()(x)


def damped_field(X, S, gamma, eps, cutoff=None):
    """Damped rescaling of a chart field ``X`` (already pushed into the chart)."""
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if eps == 0:
        raise ValueError("eps must be nonzero")
    w = S.weights
    parts = graded_parts(X, w, -max(w), -1)
    hat = parts.get(-1, PolyVectorField.zero(X.dim))
    Xe = dilate_pullback(X, w, _exact(eps), 1)
    return DampedField(float(gamma), float(eps), hat, Xe - hat, w, cutoff or CutoffSpec())


def _exact(v):
    if isinstance(v, float):
        return Fraction(v)
    return as_fraction(v)


def _ball_samples(w, radius, n_points, seed=0):
    """Quasi-random points of the sR ball ``{||x||_sR <= radius}`` (origin included)."""
    w = np.asarray(w, dtype=float)
    half = radius ** w
    sob = qmc.Sobol(d=len(w), scramble=True, seed=seed)
    pts = [np.zeros((1, len(w)))]
    have = 1
    while have < n_points:
        u = sob.random(1024) * 2 - 1
        x = u * half
        x = x[sr_pseudo_norm(x, w) <= radius]
        pts.append(x)
        have += len(x)
    return np.concatenate(pts)[:n_points]


def damping_rate_fit(X, S, gamma, eps_grid, sample_grid=None, cutoff=None, damped=True, n_points=4000):
    """Fit ``log sup |Y^{eps,gamma} - Xhat|`` against ``log |eps|``.

    Without ``sample_grid`` the sup is taken over the support of the damping,
    ``delta_{|eps|^-gamma}`` applied to quasi-random points of the sR ball of
    radius ``R2``. A given ``sample_grid`` is used as-is (a fixed compact set).
    With ``damped=False`` the raw ``X^eps - Xhat`` is measured instead.
    Returns ``(slope, residual_rms, sup_errors)``.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    if len(eps_grid) < 3 or np.ptp(np.log10(np.abs(eps_grid))) < 1:
        raise ValueError("eps grid must have >= 3 points spanning >= 1 decade")
    cutoff = cutoff or CutoffSpec()
    w = np.asarray(S.weights, float)
    base = _ball_samples(S.weights, cutoff.R2, n_points) if sample_grid is None else None
    sups = []
    for eps in eps_grid:
        Y = damped_field(X, S, gamma, eps, cutoff)
        if sample_grid is None:
            pts = base * np.power(abs(eps) ** (-gamma), w)
        else:
            pts = np.asarray(sample_grid, float)
        dev = Y.deviation(pts) if damped else Y.correction.lambdify()(pts)
        sups.append(float(np.max(np.linalg.norm(dev, axis=-1))))
    sups = np.array(sups)
    if np.all(sups == 0):
        return 0.0, 0.0, sups
    if np.any(sups == 0):
        raise ValueError("sup error vanishes on part of the grid; cannot fit a rate")
    A = np.vstack([np.log(np.abs(eps_grid)), np.ones_like(eps_grid)]).T
    coef, *_ = np.linalg.lstsq(A, np.log(sups), rcond=None)
    resid = np.log(sups) - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2))), sups


# --- coercivity ------------------------------------------------------------

def bracket_closure(fields, depth):
    """Distinct nonzero right-nested brackets of depth ``<= depth``, with their depths."""
    out, seen = [], set()
    level = list(fields)
    for d in range(1, depth + 1):
        if d > 1:
            level = [lie_bracket(X, Y) for X in fields for Y in level]
        nxt = []
        for Z in level:
            if Z.is_zero() or Z in seen or (-Z) in seen:
                continue
            seen.add(Z)
            out.append((Z, d))
            nxt.append(Z)
        level = nxt
    return out


def hormander_coercivity(frame, r, grid=None, weights=None, radius=10.0, n_points=10_000, seed=0):
    """``min_x <x>^{2r} lambda_min(P(x) P(x)^T)`` over a grid.

    ``frame`` is a list of fields or ``(field, depth)`` pairs forming the
    columns of ``P``. Default grid: Sobol points of the sR ball of the given
    radius (needs ``weights``). Returns ``(c, argmin, lam_min_values, grid)``.
    """
    fields = [f[0] if isinstance(f, tuple) else f for f in frame]
    n = fields[0].dim
    if grid is None:
        if weights is None:
            raise ValueError("weights are needed to build the default sR-ball grid")
        grid = _ball_samples(weights, radius, n_points, seed)
    grid = np.asarray(grid, dtype=float)
    P = np.stack([V.lambdify()(grid) for V in fields], axis=-1)  # (N, n, k)
    if P.shape[-1] < n:
        lam = np.zeros(len(grid))
    else:
        M = P @ np.swapaxes(P, -1, -2)
        lam = np.linalg.eigvalsh(M)[:, 0]
        lam = np.maximum(lam, 0.0)
    bracket = (1.0 + np.sum(grid ** 2, axis=-1)) ** r
    vals = bracket * lam
    i = int(np.argmin(vals))
    return float(vals[i]), grid[i], lam, grid
