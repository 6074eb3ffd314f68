"""Small-time structure of heat kernels: rescaling, expansion fits, homogeneity and Duhamel terms.

The central object is the rescaled kernel

    k_eps(tau, x, x') = |eps|^Q e(eps^2 tau, delta_eps x, delta_eps x')

computed in privileged coordinates. As ``eps -> 0`` it tends to the kernel of
the nilpotent approximation and admits an expansion in powers of ``eps``.
Two ways of computing it are offered. ``"rescaled"`` estimates the kernel of
``eps^2 delta_eps^* Delta (delta_eps)_*`` directly, on a box that stays fixed
in rescaled coordinates, so every ``eps`` costs the same. ``"direct"``
estimates ``e`` itself at time ``eps^2 tau`` and relabels.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ChartValidityError, IllConditioned
from .flag import sr_pseudo_norm
from .heat.finite_difference import FDSolver, GridSpec, fd_run_cached
from .heat.model import model_in_chart, rescale_model
from .heat.montecarlo import mc_kernel
from .heat.transforms import dilation_transform
from .operators import DiffOperator, compose_fields
from .polynomials import MultiPoly, PolyVectorField, Weights, as_fraction, graded_parts

__all__ = [
    "EstimatorConfig",
    "RescaledValues",
    "ExpansionReport",
    "HomogeneityResult",
    "WeylReport",
    "PerturbationSymbols",
    "DuhamelResult",
    "KernelTable",
    "rescaled_kernel",
    "fit_expansion",
    "expansion_sweep",
    "check_hat_homogeneity",
    "check_fi_homogeneity",
    "diagonal_weyl_check",
    "perturbation_symbols",
    "symbols_from_structure",
    "duhamel_c1_kernel",
    "eps_seed",
]


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings for one kernel estimator.

    ``dt_ratio`` fixes ``dt = t / dt_ratio``. ``box`` is ``(lo, hi)`` and,
    for the rescaled method, lives in rescaled coordinates.
    """

    method: str = "mc"
    n_paths: int = 100_000
    n_batches: int = 20
    dt_ratio: int = 500
    seed: int = 0
    richardson: bool = True
    grid_h: object = 0.05
    box: tuple | None = None
    estimate_error: bool = True
    record: tuple = ()  # extra FD times to keep, so later queries can share the run

    def __post_init__(self):
        if self.method not in ("mc", "fd"):
            raise ValueError(f"unknown estimator {self.method!r}")

    def to_json(self):
        return {
            "method": self.method,
            "n_paths": self.n_paths,
            "n_batches": self.n_batches,
            "dt_ratio": self.dt_ratio,
            "seed": self.seed,
            "richardson": self.richardson,
            "grid_h": np.atleast_1d(np.asarray(self.grid_h, float)).tolist(),
            "box": None if self.box is None else [list(map(float, self.box[0])), list(map(float, self.box[1]))],
            "estimate_error": self.estimate_error,
            "record": list(self.record),
        }


def eps_seed(seed, eps):
    """Seed for the estimator run at ``eps``: a function of ``(seed, eps)`` only."""
    e = as_fraction(eps) if not isinstance(eps, float) else Fraction(eps)
    key = [int(seed), abs(e.numerator), e.denominator, 1 if e > 0 else 0]
    return int(np.random.SeedSequence(key).generate_state(1, np.uint64)[0])


def _pool_size():
    try:
        return max(1, int(os.environ.get("SRHEAT_THREADS", "1")))
    except ValueError:
        return 1


def _estimate(model, t, source, targets, cfg, seed):
    if cfg.method == "mc":
        return mc_kernel(model, t, source, targets, n_paths=cfg.n_paths, dt=t / cfg.dt_ratio,
                         seed=seed, n_batches=cfg.n_batches, richardson=cfg.richardson)
    lo, hi = cfg.box if cfg.box is not None else model.box
    grid = GridSpec(lo, hi, cfg.grid_h)
    run = fd_run_cached(model.with_box(lo, hi), grid, t, source, t / cfg.dt_ratio, record=cfg.record,
                        estimate_error=cfg.estimate_error)
    return run.estimate(targets, history=False)


def _group_pairs(pairs):
    """``{source tuple: [(index, target)]}`` preserving first-seen order."""
    groups = {}
    for k, (x, y) in enumerate(pairs):
        groups.setdefault(tuple(float(c) for c in x), []).append((k, y))
    return groups


@dataclass(frozen=True, eq=False)
class RescaledValues:
    eps: Fraction
    tau: float
    pairs: np.ndarray  # (P, 2, n)
    values: np.ndarray
    errors: np.ndarray
    meta: dict = field(default_factory=dict)


def rescaled_kernel(model, chart, flag, eps, tau, pairs, cfg=EstimatorConfig(), method="rescaled"):
    """``|eps|^Q e(eps^2 tau, delta_eps x, delta_eps x')`` for chart points ``(x, x')``.

    ``model`` is in manifold coordinates, ``chart`` is a privileged chart at
    the base point and ``pairs`` has shape ``(P, 2, n)``. Raises
    :class:`ChartValidityError` when ``delta_eps x`` leaves the chart's
    trust ball.
    """
    eps = as_fraction(eps) if not isinstance(eps, float) else Fraction(eps)
    if eps == 0:
        raise ValueError("eps must be nonzero")
    w = Weights(flag.weights)
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 3 or pairs.shape[1] != 2 or pairs.shape[2] != len(w):
        raise ValueError("pairs must have shape (P, 2, dim)")
    scale = np.power(float(abs(eps)), np.asarray(w, float)) * np.sign(float(eps)) ** np.asarray(w)
    mapped = pairs * scale
    if np.isfinite(chart.trust_radius):
        norms = sr_pseudo_norm(mapped.reshape(-1, len(w)), w)
        if np.any(norms > chart.trust_radius * (1 + 1e-12)):
            raise ChartValidityError(
                f"delta_eps maps sample points to sR radius {norms.max():.3g}, "
                f"beyond the chart trust radius {chart.trust_radius}"
            )
    base = model_in_chart(model, chart)
    seed = eps_seed(cfg.seed, eps)
    values = np.empty(len(pairs))
    errors = np.empty(len(pairs))
    meta = {"eps": str(eps), "tau": tau, "method": method, "seed": seed, "runs": []}
    for src, items in _group_pairs(pairs).items():
        idx = [k for k, _ in items]
        tg = np.array([y for _, y in items], dtype=float)
        if method == "rescaled":
            box = cfg.box if cfg.box is not None else base.box
            m = rescale_model(base, w, eps, box=box)
            est = _estimate(m, float(tau), np.array(src), tg, cfg, seed)
        elif method == "direct":
            t = float(eps) ** 2 * float(tau)
            est = _estimate(base, t, np.array(src) * scale, tg * scale, cfg, seed)
            est = dilation_transform(est, w, float(eps))
        else:
            raise ValueError(f"unknown method {method!r}")
        values[idx] = est.values
        errors[idx] = est.error
        meta["runs"].append({k: v for k, v in est.meta.items() if k not in ("error", "history")})
    return RescaledValues(eps, float(tau), pairs, values, errors, meta)


# --- fitting ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExpansionReport:
    """Fit of ``k_eps = c_0 + c_1 eps + ... + c_N eps^N`` per sample pair."""

    eps_grid: np.ndarray
    tau: float
    pairs: np.ndarray
    values: np.ndarray  # (n_eps, P)
    errors: np.ndarray
    coefficients: np.ndarray  # (N+1, P)
    coef_stderr: np.ndarray
    residual_norm: np.ndarray  # per pair, weighted rms
    chi2_red: np.ndarray
    condition: float
    oddness_residual: float | None = None
    oddness_stderr: float | None = None
    homogeneity_residuals: dict = field(default_factory=dict)
    tolerance: float | None = None
    warnings: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.coefficients.shape[0] - 1

    @property
    def passed(self):
        """Oddness test ``|c_1(tau,0,0)| <= tol * stderr`` (default tol 3)."""
        if self.oddness_residual is None:
            return None
        tol = 3.0 if self.tolerance is None else self.tolerance
        return bool(self.oddness_residual <= tol * self.oddness_stderr)

    def to_json(self):
        return {
            "eps_grid": [float(e) for e in self.eps_grid],
            "tau": self.tau,
            "pairs": self.pairs.tolist(),
            "values": self.values.tolist(),
            "errors": self.errors.tolist(),
            "coefficients": self.coefficients.tolist(),
            "coef_stderr": self.coef_stderr.tolist(),
            "residual_norm": self.residual_norm.tolist(),
            "chi2_red": self.chi2_red.tolist(),
            "condition": self.condition,
            "oddness_residual": self.oddness_residual,
            "oddness_stderr": self.oddness_stderr,
            "homogeneity_residuals": self.homogeneity_residuals,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "warnings": list(self.warnings),
            "meta": self.meta,
        }

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        n = self.pairs.shape[2]
        wr.writerow(["eps", "tau"] + [f"x{j + 1}" for j in range(n)] + [f"xp{j + 1}" for j in range(n)]
                    + ["value", "stderr"])
        for a, e in enumerate(self.eps_grid):
            for p, (x, y) in enumerate(self.pairs):
                wr.writerow([repr(float(e)), repr(self.tau)] + [repr(float(c)) for c in x]
                            + [repr(float(c)) for c in y]
                            + [repr(float(self.values[a, p])), repr(float(self.errors[a, p]))])
        return buf.getvalue()


def fit_expansion(eps_grid, values, errors=None, N=2, tau=1.0, pairs=None, weighting="auto",
                  max_condition=1e10, tolerance=None, meta=None):
    """Weighted least squares in ``eps^0..eps^N`` for every sample column.

    ``values`` and ``errors`` are ``(n_eps,)`` or ``(n_eps, P)``. With
    ``weighting="auto"`` the weights are ``1/err^2`` when errors are given and
    uniform otherwise (``"uniform"`` forces the latter). Coefficient errors
    are propagated from the point errors through the estimator and inflated
    by ``sqrt(chi2_red)`` when the fit is worse than the error bars claim.
    """
    eps = np.asarray([float(e) for e in eps_grid])
    vals = np.asarray(values, dtype=float)
    single = vals.ndim == 1
    if single:
        vals = vals[:, None]
    errs = None if errors is None else np.asarray(errors, dtype=float).reshape(vals.shape)
    if len(eps) < N + 3:
        raise ValueError(f"need at least N+3 = {N + 3} values of eps, got {len(eps)}")
    if not (np.any(eps > 0) and np.any(eps < 0)):
        raise ValueError("the eps grid must contain both signs")
    # columns scaled so the condition number reflects the grid, not the units
    s = float(np.max(np.abs(eps)))
    A = np.vander(eps / s, N + 1, increasing=True)
    cond = float(np.linalg.cond(A))
    if cond > max_condition:
        raise IllConditioned(
            f"Vandermonde condition number {cond:.3g} exceeds {max_condition:.3g}; "
            f"use a sign-symmetric geometric grid such as +-eps0 * 2^-j with fewer levels or smaller N"
        )
    n_eps, P = vals.shape
    coef = np.empty((N + 1, P))
    cse = np.empty((N + 1, P))
    rnorm = np.empty(P)
    chi2 = np.empty(P)
    colscale = s ** -np.arange(N + 1)
    dof = max(n_eps - (N + 1), 1)
    for p in range(P):
        e = None if errs is None else np.maximum(errs[:, p], 1e-300)
        if weighting == "uniform" or e is None:
            W = np.ones(n_eps)
        else:
            W = 1.0 / e ** 2
        AW = A * W[:, None]
        G = np.linalg.inv(A.T @ AW)
        c = G @ (AW.T @ vals[:, p])
        res = vals[:, p] - A @ c
        if e is None:
            cov = G * (float(res @ res) / dof)
            chi2[p] = 1.0
        else:
            Sigma = e ** 2
            cov = G @ (AW.T * Sigma) @ AW @ G
            chi2[p] = float(np.sum((res / e) ** 2)) / dof
            cov = cov * max(1.0, chi2[p])
        coef[:, p] = c * colscale
        cse[:, p] = np.sqrt(np.maximum(np.diag(cov), 0.0)) * colscale
        scale = np.abs(vals[:, p]).max() or 1.0
        rnorm[p] = float(np.sqrt(np.mean(res ** 2))) / scale
    notes = []
    if N > 2 and errs is not None:
        notes.append("coefficients beyond c_2 are noise-dominated for Monte Carlo inputs")
    odd = odd_se = None
    if pairs is not None:
        pairs = np.asarray(pairs, float)
        diag0 = [p for p, (x, y) in enumerate(pairs) if not np.any(x) and not np.any(y)]
        if diag0 and N >= 1:
            p = diag0[0]
            odd, odd_se = float(abs(coef[1, p])), float(cse[1, p])
    else:
        pairs = np.zeros((P, 2, 1))
    return ExpansionReport(
        eps_grid=eps, tau=float(tau), pairs=pairs, values=vals,
        errors=np.zeros_like(vals) if errs is None else errs,
        coefficients=coef, coef_stderr=cse, residual_norm=rnorm, chi2_red=chi2, condition=cond,
        oddness_residual=odd, oddness_stderr=odd_se, tolerance=tolerance, warnings=tuple(notes),
        meta=dict(meta or {}),
    )


def expansion_sweep(model, chart, flag, eps_grid, tau, pairs, cfg=EstimatorConfig(), N=2,
                    method="rescaled", tolerance=None):
    """Run :func:`rescaled_kernel` over ``eps_grid`` and fit the expansion.

    Estimator runs for different ``eps`` go through a thread pool of size
    ``SRHEAT_THREADS``; each has its own seed, so the pool size does not
    change the numbers.
    """
    eps_list = [as_fraction(e) if not isinstance(e, float) else Fraction(e) for e in eps_grid]

    def one(e):
        return rescaled_kernel(model, chart, flag, e, tau, pairs, cfg, method=method)

    n = _pool_size()
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            runs = list(pool.map(one, eps_list))
    else:
        runs = [one(e) for e in eps_list]
    vals = np.array([r.values for r in runs])
    errs = np.array([r.errors for r in runs])
    weighting = "uniform" if cfg.method == "fd" else "auto"
    meta = {"estimator": cfg.to_json(), "method": method, "runs": [r.meta for r in runs],
            "model": model.fingerprint()}
    return fit_expansion(eps_list, vals, errs, N=N, tau=tau, pairs=pairs, weighting=weighting,
                         tolerance=tolerance, meta=meta)


# --- homogeneity -------------------------------------------------------------------

def _key(v):
    return tuple(round(float(c), 9) for c in np.atleast_1d(v))


class KernelTable:
    """Lookup ``(t, x, x') -> (value, error)`` built from kernel estimates.

    FD estimates that carry a time history contribute every recorded time.
    """

    def __init__(self):
        self._data = {}

    def add(self, est, extrapolated=False):
        x = _key(est.source)
        pick = "extrapolated" if extrapolated else "values"
        top = est.meta["extrapolated"] if extrapolated else est.values
        rows = [(est.t, np.asarray(top), est.error)]
        for s, rec in est.meta.get("history", {}).items():
            rows.append((float(s), np.asarray(rec[pick]), np.asarray(rec["error"])))
        for t, vals, errs in rows:
            for y, v, e in zip(est.targets, vals, errs):
                self._data[(round(t, 12), x, _key(y))] = (float(v), float(e))
        return self

    @classmethod
    def from_estimates(cls, *ests, extrapolated=False):
        """With ``extrapolated=True`` the FD h/2h Richardson values are stored (errors unchanged)."""
        tab = cls()
        for e in ests:
            tab.add(e, extrapolated)
        return tab

    def __call__(self, t, x, y):
        try:
            return self._data[(round(float(t), 12), _key(x), _key(y))]
        except KeyError:
            raise KeyError(f"no kernel value stored for t={t}, x={tuple(x)}, x'={tuple(y)}") from None

    def __len__(self):
        return len(self._data)


@dataclass(frozen=True)
class HomogeneityResult:
    max_residual: float  # max relative violation
    max_ratio: float  # max of violation / combined error
    residuals: tuple
    errors: tuple
    samples: tuple

    def passed(self, factor):
        return self.max_ratio <= factor

    def to_json(self):
        return {
            "max_residual": self.max_residual,
            "max_ratio": self.max_ratio,
            "residuals": list(self.residuals),
            "errors": list(self.errors),
            "samples": [[s[0], list(map(float, s[1])), list(map(float, s[2])), s[3]] for s in self.samples],
        }


def _dil(x, w, lam):
    w = np.asarray(w, float)
    return np.asarray(x, float) * np.sign(lam) ** w * abs(lam) ** w


def _homogeneity(fn, samples, weights, Q, lambdas, order):
    res, errs, used = [], [], []
    for t, x, y in samples:
        for lam in lambdas:
            lam = float(lam)
            v0, e0 = fn(t, x, y)
            v1, e1 = fn(lam * lam * t, _dil(x, weights, lam), _dil(y, weights, lam))
            f = abs(lam) ** Q * lam ** (-order)
            rhs, rerr = f * v1, abs(f) * e1
            denom = max(abs(v0), abs(rhs), 1e-300)
            r = abs(v0 - rhs) / denom
            ce = (e0 + rerr) / denom
            res.append(r)
            errs.append(ce)
            used.append((float(t), tuple(map(float, x)), tuple(map(float, y)), lam))
    ratios = [r / e if e > 0 else (0.0 if r == 0 else math.inf) for r, e in zip(res, errs)]
    return HomogeneityResult(max(res, default=0.0), max(ratios, default=0.0), tuple(res), tuple(errs), tuple(used))


def check_hat_homogeneity(ehat, samples, weights, Q, lambdas=(0.5, 2.0)):
    """Test ``e(t,x,x') = |l|^Q e(l^2 t, delta_l x, delta_l x')`` at ``samples``.

    ``ehat(t, x, y)`` returns ``(value, error)``; a :class:`KernelTable`
    fits. Residuals are relative to the larger side of the identity.
    """
    return _homogeneity(ehat, samples, weights, Q, lambdas, 0)


def check_fi_homogeneity(fi, i, samples, weights, Q, lambdas=(0.5, 2.0, -1.0)):
    """Test ``f_i(t,x,x') = l^-i |l|^Q f_i(l^2 t, delta_l x, delta_l x')``; ``l`` may be negative."""
    return _homogeneity(fi, samples, weights, Q, lambdas, i)


# --- local Weyl law ----------------------------------------------------------------

@dataclass(frozen=True)
class WeylReport:
    t_grid: tuple
    values: tuple
    errors: tuple
    slope: float
    slope_stderr: float
    constant: float
    expected_slope: float
    tolerance: float

    @property
    def passed(self):
        return abs(self.slope - self.expected_slope) <= self.tolerance

    def to_json(self):
        return {
            "t_grid": list(self.t_grid),
            "values": list(self.values),
            "errors": list(self.errors),
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "constant": self.constant,
            "expected_slope": self.expected_slope,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _diagonal_values(model, t_grid, point, cfg, extrapolate=False):
    """``e(t, q, q)`` over ``t_grid``; FD uses one solve with recorded times."""
    q = np.asarray(point, float)
    if cfg.method == "fd":
        lo, hi = cfg.box if cfg.box is not None else model.box
        grid = GridSpec(lo, hi, cfg.grid_h)
        t_max = max(t_grid)
        run = fd_run_cached(model.with_box(lo, hi), grid, t_max, q, t_max / cfg.dt_ratio,
                            record=tuple(t_grid) + tuple(cfg.record), estimate_error=cfg.estimate_error)
        out = []
        for t in t_grid:
            v, e, x = run.sample(t, q[None, :])
            if extrapolate and x is not None:
                v = x
            out.append((float(v[0]), 0.0 if e is None else float(e[0])))
        return out
    out = []
    for t in t_grid:
        est = mc_kernel(model, t, q, q[None, :], n_paths=cfg.n_paths, dt=t / cfg.dt_ratio,
                        seed=eps_seed(cfg.seed, Fraction(t).limit_denominator(10 ** 9)),
                        n_batches=cfg.n_batches, richardson=cfg.richardson)
        out.append((float(est.values[0]), float(est.error[0])))
    return out


def diagonal_weyl_check(model, chart, flag, t_grid, cfg=EstimatorConfig(method="fd"), test_density=None,
                        points=None, quad_weights=None, tolerance=0.1, extrapolate=False, diagonal=None):
    """Log-log fit of the diagonal ``e(t, q, q)`` (or ``int e(t,q,q) f dmu``) against ``t``.

    Without ``points`` the diagonal is taken at the chart's base point. With
    ``points`` and ``quad_weights`` the integral is approximated by
    ``sum_k w_k f(q_k) h(q_k) e(t, q_k, q_k)``. Expected slope ``-Q/2``.
    ``diagonal(t, q)`` may supply precomputed ``(value, error)`` pairs in
    chart coordinates instead of running the estimator.
    """
    t_grid = tuple(sorted(float(t) for t in t_grid))
    if len(t_grid) < 3 or t_grid[-1] / t_grid[0] < 2:
        raise ValueError("t grid too coarse: need >= 3 times spanning a factor >= 2")
    base = model_in_chart(model, chart)
    if points is None:
        pts = np.zeros((1, model.dim))
        qw = np.ones(1)
    else:
        pts = np.atleast_2d(np.asarray(points, float)) - np.array([float(c) for c in chart.base_point])
        qw = np.asarray(quad_weights, float)
    f = np.ones(len(pts)) if test_density is None else np.asarray(test_density(pts), float)
    hq = base.h(pts)
    total = np.zeros(len(t_grid))
    err = np.zeros(len(t_grid))
    for q, a in zip(pts, qw * f * hq):
        if a == 0:
            continue
        if diagonal is not None:
            vals = [diagonal(t, q) for t in t_grid]
        else:
            vals = _diagonal_values(base, t_grid, q, cfg, extrapolate)
        total += a * np.array([v for v, _ in vals])
        err += abs(a) * np.array([e for _, e in vals])
    if np.any(total <= 0):
        raise ValueError("diagonal values must be positive for a log-log fit")
    lt, lv = np.log(t_grid), np.log(total)
    sig = np.maximum(err / total, 1e-12)
    A = np.vstack([lt, np.ones_like(lt)]).T
    W = 1.0 / sig ** 2
    G = np.linalg.inv(A.T @ (A * W[:, None]))
    c = G @ (A.T @ (W * lv))
    res = lv - A @ c
    chi2 = float(np.sum(res ** 2 * W)) / max(len(lt) - 2, 1)
    se = float(np.sqrt(G[0, 0] * max(1.0, chi2)))
    return WeylReport(t_grid, tuple(total.tolist()), tuple(err.tolist()), float(c[0]), se,
                      float(np.exp(c[1])), -flag.Q / 2, float(tolerance))


# --- Duhamel terms -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PerturbationSymbols:
    """``A_1`` and ``A_2`` with polynomial coefficients, plus the degree-bound check."""

    A1: DiffOperator
    A2: DiffOperator
    r: int

    @property
    def degree_bounds(self):
        return ((self.r + 1) ** 2, (self.r + 2) ** 2)

    @property
    def degree_ok(self):
        b1, b2 = self.degree_bounds
        return self.A1.coefficient_degree() < b1 and self.A2.coefficient_degree() < b2

    def to_json(self):
        return {
            "A1": self.A1.to_json(),
            "A2": self.A2.to_json(),
            "A1_text": self.A1.to_str(),
            "A2_text": self.A2.to_str(),
            "r": self.r,
            "degree_bounds": list(self.degree_bounds),
            "degree_ok": self.degree_ok,
        }


def _sym(X, Y):
    return compose_fields(X, Y) + compose_fields(Y, X)


def perturbation_symbols(Y0, Y1, hats, r, drift_parts=None, v0=0):
    """First two correction operators of ``eps^2 delta_eps^* Delta (delta_eps)_*``.

    ``Y0[i]``, ``Y1[i]`` are the degree 0 and 1 parts of the ``i``-th field,
    ``hats[i]`` its degree -1 part. ``drift_parts`` maps a weighted degree
    ``k`` to the drift part of that degree; it enters at order ``eps^(k+2)``.
    ``v0`` is the potential at the base point.
    """
    n = hats[0].dim
    A1 = DiffOperator.zero(n)
    A2 = DiffOperator.zero(n)
    for H, P0, P1 in zip(hats, Y0, Y1):
        A1 = A1 + _sym(H, P0)
        A2 = A2 + _sym(H, P1) + compose_fields(P0, P0)
    drift_parts = drift_parts or {}
    if -1 in drift_parts:
        A1 = A1 + DiffOperator.from_field(drift_parts[-1])
    if 0 in drift_parts:
        A2 = A2 + DiffOperator.from_field(drift_parts[0])
    v0 = as_fraction(v0) if not isinstance(v0, float) else v0
    if v0:
        A2 = A2 - DiffOperator.multiplication(MultiPoly.constant(n, v0))
    return PerturbationSymbols(A1, A2, int(r))


def symbols_from_structure(S, potential=None):
    """:func:`perturbation_symbols` for a :class:`NilpotentStructure` (uses its pushed fields)."""
    w = S.weights
    zero = PolyVectorField.zero(S.dim)
    Y0, Y1 = [], []
    for P in S.pushed_fields:
        parts = graded_parts(P, w, -max(w), 1)
        Y0.append(parts.get(0, zero))
        Y1.append(parts.get(1, zero))
    drift = {}
    if S.pushed_drift is not None:
        drift = graded_parts(S.pushed_drift, w, -max(w), 0)
        if S.drift_degree == -1:
            drift = {k: v for k, v in drift.items() if k >= -1}
    v0 = 0 if potential is None else potential.evaluate((0,) * S.dim)
    return perturbation_symbols(Y0, Y1, S.hat_fields, S.r, drift, v0)


@dataclass(frozen=True, eq=False)
class DuhamelResult:
    t: float
    source: np.ndarray
    targets: np.ndarray
    values: np.ndarray
    quad_error: np.ndarray
    space_error: np.ndarray
    n_nodes: int
    flagged: bool = False

    @property
    def error(self):
        return self.quad_error + self.space_error

    def to_json(self):
        return {
            "t": self.t,
            "source": self.source.tolist(),
            "targets": self.targets.tolist(),
            "values": self.values.tolist(),
            "quad_error": self.quad_error.tolist(),
            "space_error": self.space_error.tolist(),
            "n_nodes": self.n_nodes,
            "flagged": self.flagged,
        }


def _duhamel_on_grid(model, grid, A, t, source, targets, n_nodes, steps_per_node):
    solver = FDSolver(model, grid)
    dt = t / (2 * n_nodes * steps_per_node)
    # forward propagation: states are densities in the second variable, so A acts by its transpose
    At = A.grid_matrix(grid).T.tocsr()
    nodes = {K: [(k + 0.5) * t / K for k in range(K)] for K in (n_nodes, n_nodes // 2)}
    times = sorted({s for v in nodes.values() for s in v})
    _, rec = solver.evolve(solver.dirac(source), t, dt, record=times)
    out, scale = {}, 0.0
    for K, ss in nodes.items():
        ds = t / K
        inject_at = {int(round(s / dt)): ds * (At @ rec[s]) for s in ss}

        def inject(k, v, table=inject_at):
            return table.get(k)

        w0 = np.zeros_like(rec[times[0]])
        w, _ = solver.evolve(w0, t, dt, rannacher=False, inject=inject)
        out[K] = solver.sample(w, targets) / model.h(targets)
        scale = max(scale, float(np.abs(w).max(initial=0.0)))
    return out, scale


def duhamel_c1_kernel(model, grid, A, t, source, targets, n_nodes=16, steps_per_node=10,
                      estimate_error=True, tolerance=None):
    """Kernel of ``C(t) = int_0^t exp((t-s)L) A exp(sL) ds`` by midpoint quadrature in ``s``.

    ``model`` carries ``L`` (normally the nilpotent approximation) and ``A``
    is a :class:`DiffOperator`. The midpoint rule avoids the endpoint
    singularities of the integrand. The quadrature error is estimated from
    the ``n_nodes/2`` rule, the spatial error from the ``2h`` grid. With
    ``tolerance`` set, results whose error exceeds it are flagged.
    """
    if n_nodes < 2 or n_nodes % 2:
        raise ValueError("n_nodes must be even and >= 2")
    source = np.asarray(source, float)
    targets = np.atleast_2d(np.asarray(targets, float))
    fine, scale = _duhamel_on_grid(model, grid, A, t, source, targets, n_nodes, steps_per_node)
    vals = fine[n_nodes]
    qerr = np.abs(fine[n_nodes] - fine[n_nodes // 2]) / 3
    serr = np.zeros_like(vals)
    if estimate_error:
        coarse, _ = _duhamel_on_grid(model, grid.coarsen(), A, t, source, targets, n_nodes, steps_per_node)
        serr = np.abs(vals - coarse[n_nodes]) / 3
    # linear-algebra floor, relative to the solution size anywhere on the grid (targets may sit at a zero)
    serr = serr + 1e-10 * scale
    flagged = tolerance is not None and bool(np.any(qerr + serr > tolerance))
    return DuhamelResult(float(t), source, targets, vals, qerr, serr, n_nodes, flagged)
