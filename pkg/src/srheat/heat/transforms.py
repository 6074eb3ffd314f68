"""Kernel relabelling under measure changes and diffeomorphisms, Kac and decay checks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from ..errors import Inconclusive
from .finite_difference import FDSolver, GridSpec

__all__ = [
    "kernel_change_measure",
    "kernel_diffeo_transform",
    "dilation_transform",
    "exp_decay_check",
    "kac_check",
    "KacReport",
]


def _scale_estimate(est, factor, **changes):
    factor = np.asarray(factor, dtype=float)
    meta = dict(est.meta)
    if "error" in meta:
        meta["error"] = np.asarray(meta["error"]) * np.abs(factor)
    stderr = None if est.stderr is None else est.stderr * np.abs(factor)
    return replace(est, values=est.values * factor, stderr=stderr, meta=meta, **changes)


def kernel_change_measure(est, h, tag="mu"):
    """Kernel w.r.t. ``h * (old measure)``: divide by ``h`` at the targets."""
    hv = h.lambdify()(est.targets) if hasattr(h, "lambdify") else np.asarray(h(est.targets), float)
    if np.any(hv <= 0):
        raise ValueError("density must be positive at every target")
    return _scale_estimate(est, 1.0 / hv, measure_tag=tag)


def kernel_diffeo_transform(est, phi_inv, jacobian, time_factor=1.0):
    """Relabel an estimate of ``e_A(s, phi q, phi q')`` as ``e_{phi^* A}(s / time_factor, q, q')``.

    ``phi_inv`` maps points back (vectorised), ``jacobian`` is ``|J(phi)|``
    as a scalar or a function of the new target points. ``time_factor``
    accounts for operators that were also rescaled in time, as in
    ``eps^2 delta_eps^* A``.
    """
    src = np.asarray(phi_inv(est.source[None, :]), float)[0]
    tg = np.asarray(phi_inv(est.targets), float)
    J = jacobian(tg) if callable(jacobian) else jacobian
    return _scale_estimate(est, np.abs(J), source=src, targets=tg, t=est.t / time_factor)


def dilation_transform(est, weights, eps):
    """``|eps|^Q e(eps^2 tau, delta_eps x, delta_eps x')`` as a kernel at ``(tau, x, x')``."""
    w = np.asarray(weights, float)
    inv = np.sign(float(eps)) ** w * np.power(1.0 / abs(float(eps)), w)
    return kernel_diffeo_transform(
        est, lambda p: np.asarray(p) * inv, abs(float(eps)) ** w.sum(), time_factor=float(eps) ** 2
    )


def exp_decay_check(est_family, distance_fn, eps_slack=0.5, Q=None, n_bins=8):
    """Upper-envelope fit of ``log(e t^{Q/2})`` against ``d^2/t``.

    Passes when the envelope slope is at most ``-1/(4(1+eps_slack))``.
    Raises :class:`Inconclusive` when the data span less than one unit of
    ``log``. Returns ``(passed, slope)``.
    """
    X, Y = [], []
    for est in est_family:
        q = Q if Q is not None else 0.0
        err = est.error
        for y, v, e in zip(est.targets, est.values, err):
            if v > 0 and v > 3 * e:
                d = float(distance_fn(est.source, y))
                X.append(d * d / est.t)
                Y.append(np.log(v * est.t ** (q / 2)))
    X, Y = np.asarray(X), np.asarray(Y)
    if len(X) < 3 or np.ptp(Y) < 1.0 or np.ptp(X) <= 0:
        raise Inconclusive("not enough dynamic range for a decay fit")
    edges = np.linspace(X.min(), X.max(), n_bins + 1)
    bx, by = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (X >= a) & (X <= b)
        if np.any(sel):
            k = np.argmax(np.where(sel, Y, -np.inf))
            bx.append(X[k])
            by.append(Y[k])
    if len(bx) < 2:
        raise Inconclusive("envelope has fewer than two bins")
    slope = float(np.polyfit(bx, by, 1)[0])
    return slope <= -1.0 / (4 * (1 + eps_slack)), slope


@dataclass(frozen=True)
class KacReport:
    t_grid: tuple
    discrepancy: tuple
    floor: tuple
    slope: float | None
    passed: bool
    reason: str

    def to_json(self):
        return {
            "t_grid": list(self.t_grid),
            "discrepancy": list(self.discrepancy),
            "floor": list(self.floor),
            "slope": self.slope,
            "passed": self.passed,
            "reason": self.reason,
        }


def kac_check(model, t_grid, box_small, box_large, interior_points, h, source=None, dt=None,
              floor_rel=1e-9, slope_threshold=3.0):
    """Compare Dirichlet kernels on two nested boxes over ``t_grid``.

    Both boxes use the same grid spacing ``h``; the kernel is taken from
    ``source`` (default: first interior point) to every interior point.
    The floor is ``floor_rel * max|e|`` per time, standing in for the linear
    solver tolerance. PASS when the log-log slope over above-floor times
    exceeds ``slope_threshold`` or when fewer than two times rise above the
    floor.
    """
    t_grid = tuple(sorted(float(t) for t in t_grid))
    pts = np.atleast_2d(np.asarray(interior_points, float))
    src = pts[0] if source is None else np.asarray(source, float)
    (slo, shi), (llo, lhi) = box_small, box_large
    slo, shi, llo, lhi = (np.asarray(v, float) for v in (slo, shi, llo, lhi))
    if np.any(llo > slo) or np.any(lhi < shi):
        raise ValueError("box_small must sit inside box_large")
    margin = float(np.min(np.concatenate([pts.min(0) - slo, shi - pts.max(0)])))
    if margin <= 0:
        raise ValueError("interior points must lie strictly inside box_small")
    if margin < 0.1 * float(np.min(shi - slo)):
        warnings.warn("interior points sit close to the small box boundary", RuntimeWarning, stacklevel=2)
    dt = dt if dt is not None else t_grid[0] / 10
    out = []
    for lo, hi in ((slo, shi), (llo, lhi)):
        solver = FDSolver(model.with_box(lo, hi), GridSpec(lo, hi, h))
        _, rec = solver.evolve(solver.dirac(src), t_grid[-1], dt, record=t_grid)
        out.append({t: solver.sample(rec[t], pts) for t in t_grid})
    disc = tuple(float(np.max(np.abs(out[0][t] - out[1][t]))) for t in t_grid)
    floor = tuple(floor_rel * float(np.max(np.abs(out[1][t]))) for t in t_grid)
    above = [i for i, (d, f) in enumerate(zip(disc, floor)) if d > f]
    if len(above) < 2:
        return KacReport(t_grid, disc, floor, None, True, "discrepancy below the solver floor")
    lt = np.log([t_grid[i] for i in above])
    ld = np.log([disc[i] for i in above])
    slope = float(np.polyfit(lt, ld, 1)[0])
    ok = slope > slope_threshold
    return KacReport(t_grid, disc, floor, slope, ok,
                     f"log-log slope {slope:.2f} {'>' if ok else '<='} {slope_threshold}")
