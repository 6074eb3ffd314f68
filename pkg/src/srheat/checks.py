"""Named verification checks run by ``srheat verify`` and the acceptance suite.

Every check takes a :class:`~srheat.corpus.ModelSpec`, a dict of settings
(merged over the defaults below) and a tolerance scale, and returns a
:class:`CheckResult`. Tolerances are multiplied by ``tolerance_scale``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .asymptotics import (
    EstimatorConfig,
    KernelTable,
    check_hat_homogeneity,
    diagonal_weyl_check,
    duhamel_c1_kernel,
    expansion_sweep,
    rescaled_kernel,
    symbols_from_structure,
)
from .heat.finite_difference import GridSpec, fd_run_cached
from .heat.model import HeatModel, model_in_chart
from .heat.transforms import kac_check
from .nilpotent import CutoffSpec, bracket_closure, damping_rate_fit, hormander_coercivity
from .operators import DiffOperator
from .polynomials import MultiPoly

__all__ = ["CheckResult", "CHECKS", "DEFAULTS", "run_check"]


@dataclass
class CheckResult:
    name: str
    model: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    reason: str = ""

    def to_json(self):
        return {
            "check": self.name,
            "model": self.model,
            "passed": bool(self.passed),
            "reason": self.reason,
            "metrics": _clean(self.metrics),
            "config": _clean(self.config),
        }


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, Fraction):
        return str(v)
    return v


def _frac(v):
    return Fraction(str(v)) if not isinstance(v, Fraction) else v


def _merge(defaults, overrides):
    out = dict(defaults)
    for k, v in (overrides or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _box(spec, cfg):
    if cfg.get("box"):
        lo, hi = cfg["box"]
        return np.asarray(lo, float), np.asarray(hi, float)
    m = spec.heat_model()
    return m.box_lo, m.box_hi


def _fd_cfg(spec, fd, seed=0):
    lo, hi = _box(spec, fd)
    return EstimatorConfig(method="fd", grid_h=tuple(np.broadcast_to(np.asarray(fd["grid_h"], float), lo.shape)),
                           dt_ratio=int(fd["dt_ratio"]), box=(tuple(lo), tuple(hi)), seed=seed,
                           record=tuple(float(r) for r in fd.get("record", ())))


def _mc_cfg(mc, seed):
    return EstimatorConfig(method="mc", n_paths=int(mc["n_paths"]), dt_ratio=int(mc["dt_ratio"]),
                           n_batches=int(mc.get("n_batches", 20)), seed=int(mc.get("seed", seed)))


def _origin_pair(dim):
    return np.zeros((1, 2, dim))


def _hat_model(spec, S, box):
    return HeatModel(S.hat_fields, box[0], box[1], S.hat_drift, None,
                     None if S.measure_constant == 1 else MultiPoly.constant(S.dim, Fraction(S.measure_constant)),
                     S.weights, name=f"{spec.name}[hat]")


# per-dimension defaults; the 3-D grids are the ones the timing budget allows
def _default_grid(dim):
    return {1: 0.01, 2: 0.05, 3: [0.25, 0.25, 0.125]}.get(dim, 0.25)


DEFAULTS = {
    "limit": {
        "eps_grid": ["1", "1/2", "1/4", "1/8"],
        "tau": 1.0,
        "fd": {"grid_h": None, "dt_ratio": 100},
        "plateau_fd": None,
        "mc": {"n_paths": 200_000, "dt_ratio": 500},
        "shrink_factor": 1.5,
        "floor_rel": 1e-9,
        "agreement_factor": 3.0,
    },
    "expansion": {
        "eps_grid": ["1/2", "-1/2", "1/4", "-1/4", "1/8", "-1/8"],
        "tau": 1.0,
        "N": 2,
        "estimator": "fd",
        "fd": {"grid_h": None, "dt_ratio": 100},
        "mc": {"n_paths": 100_000, "dt_ratio": 500},
        "extra_targets": [],
        "factor": 3.0,
    },
    "kac": {
        "t_grid": [0.005, 0.01, 0.02, 0.03, 0.04, 0.05],
        "small_scale": 0.25,
        "grid_h": None,
        "dt": None,
        "floor_rel": 1e-9,
        "slope_threshold": 3.0,
    },
    "weyl": {
        "t_grid": [0.24, 0.36, 0.5, 0.72, 1.0],
        "fd": {"grid_h": None, "dt_ratio": 100},
        "extrapolate": True,
        "tolerance": 0.1,
    },
    "damping": {
        "gamma": 0.1,
        "eps_grid": [10.0 ** (-k / 2) for k in range(9)],
        "expected": None,
        "tolerance": 0.1,
        "bound_slack": 0.15,
        "n_points": 4000,
        "cutoff": {"R1": 1.0, "R2": 2.0, "profile": "smooth"},
    },
    "coercivity": {"radius": 10.0, "n_points": 10_000, "seed": 0},
    "duhamel": {
        "t": 1.0,
        "grid_h": None,
        "box": None,
        "n_nodes": 16,
        "steps_per_node": 10,
        "identity_factor": 2.0,
        "origin_factor": 3.0,
        "targets": [],
    },
    "homogeneity": {
        "t": 0.96,
        "run_t": 1.0,
        "lambdas": [0.5, 2.0],
        "fd": {"grid_h": None, "dt_ratio": 100},
        "sample_step": 0.5,
        "factor": 5.0,
    },
}


def _fill_grid(fd, dim):
    fd = dict(fd)
    if fd.get("grid_h") is None:
        fd["grid_h"] = _default_grid(dim)
    return fd


# --- individual checks -----------------------------------------------------------

def check_limit(spec, cfg, scale, seed):
    """``|eps|^Q e(eps^2 tau, 0, 0)`` over a shrinking eps grid: Cauchy test plus an MC/FD plateau comparison."""
    flag = spec.flag()
    chart = spec.chart(flag)
    model = spec.heat_model()
    fd = _fd_cfg(spec, _fill_grid(cfg["fd"], spec.dim), seed)
    eps = [_frac(e) for e in cfg["eps_grid"]]
    pair = _origin_pair(spec.dim)
    vals, errs = [], []
    for e in eps:
        r = rescaled_kernel(model, chart, flag, e, cfg["tau"], pair, fd)
        vals.append(float(r.values[0]))
        errs.append(float(r.errors[0]))
    diffs = [abs(a - b) for a, b in zip(vals[:-1], vals[1:])]
    floor = cfg["floor_rel"] * max(abs(v) for v in vals)
    shrink = cfg["shrink_factor"] / scale
    ratios, cauchy = [], True
    for d0, d1 in zip(diffs[:-1], diffs[1:]):
        if d1 <= floor:
            ratios.append(math.inf)
            continue
        ratios.append(d0 / d1)
        cauchy &= d0 / d1 >= shrink
    metrics = {"eps_grid": [str(e) for e in eps], "values": vals, "errors": errs, "differences": diffs,
               "ratios": ratios, "floor": floor, "cauchy": cauchy, "constant": vals[-1]}
    passed = cauchy
    e_last = eps[-1]
    if cfg.get("plateau_fd"):
        pfd = _fd_cfg(spec, _fill_grid(cfg["plateau_fd"], spec.dim), seed)
        r = rescaled_kernel(model, chart, flag, e_last, cfg["tau"], pair, pfd)
        fd_val, fd_err = float(r.values[0]), float(r.errors[0])
    else:
        fd_val, fd_err = vals[-1], errs[-1]
    metrics.update({"plateau_fd": fd_val, "plateau_fd_error": fd_err, "constant": fd_val})
    if cfg.get("mc"):
        r = rescaled_kernel(model, chart, flag, e_last, cfg["tau"], pair, _mc_cfg(cfg["mc"], seed))
        mc_val, mc_err = float(r.values[0]), float(r.errors[0])
        gap = abs(mc_val - fd_val)
        bound = cfg["agreement_factor"] * scale * (mc_err + fd_err)
        agree = gap <= bound
        metrics.update({"plateau_mc": mc_val, "plateau_mc_stderr": mc_err, "plateau_gap": gap,
                        "plateau_bound": bound, "agreement": agree, "mc_seed": r.meta["seed"]})
        passed &= agree
    reason = "Cauchy ratios " + ", ".join("inf" if math.isinf(x) else f"{x:.2f}" for x in ratios)
    return CheckResult("limit", spec.name, passed, metrics, cfg, reason)


def check_expansion(spec, cfg, scale, seed):
    """Sign-symmetric eps fit at ``(tau, 0, 0)``; passes when ``|c_1| <= factor * stderr``."""
    flag = spec.flag()
    chart = spec.chart(flag)
    model = spec.heat_model()
    if cfg["estimator"] == "mc":
        est = _mc_cfg(cfg["mc"], seed)
    else:
        est = _fd_cfg(spec, _fill_grid(cfg["fd"], spec.dim), seed)
    pairs = [np.zeros((2, spec.dim))] + [np.array([np.zeros(spec.dim), t], float) for t in cfg["extra_targets"]]
    rep = expansion_sweep(model, chart, flag, [_frac(e) for e in cfg["eps_grid"]], cfg["tau"], np.array(pairs), est,
                          N=int(cfg["N"]), tolerance=cfg["factor"] * scale)
    metrics = {"c": rep.coefficients[:, 0], "stderr": rep.coef_stderr[:, 0], "c1": rep.oddness_residual,
               "c1_stderr": rep.oddness_stderr, "chi2_red": rep.chi2_red, "condition": rep.condition,
               "report": rep.to_json()}
    ok = bool(rep.passed)
    return CheckResult("expansion", spec.name, ok, metrics, cfg,
                       f"|c1| = {rep.oddness_residual:.3e} vs {cfg['factor'] * scale:g} x stderr {rep.oddness_stderr:.3e}")


def check_kac(spec, cfg, scale, seed):
    """Nested-box Dirichlet discrepancy at the base point over small times."""
    model = spec.heat_model()
    flag = spec.flag()
    chart = spec.chart(flag)
    base = model_in_chart(model, chart)
    lo, hi = base.box
    h = np.broadcast_to(np.asarray(cfg["grid_h"] if cfg["grid_h"] is not None else _default_grid(spec.dim), float),
                        lo.shape)
    s = cfg["small_scale"]
    slo, shi = np.round(lo * s / h) * h, np.round(hi * s / h) * h
    t_grid = [float(t) for t in cfg["t_grid"]]
    dt = cfg["dt"] if cfg["dt"] is not None else min(t_grid) / 10
    rep = kac_check(base, t_grid, (slo, shi), (lo, hi), np.zeros((1, spec.dim)), h, dt=dt,
                    floor_rel=cfg["floor_rel"], slope_threshold=cfg["slope_threshold"] / scale)
    return CheckResult("kac", spec.name, rep.passed, rep.to_json(), cfg, rep.reason)


def check_weyl(spec, cfg, scale, seed):
    flag = spec.flag()
    chart = spec.chart(flag)
    model = spec.heat_model()
    fd = _fd_cfg(spec, _fill_grid(cfg["fd"], spec.dim), seed)
    rep = diagonal_weyl_check(model, chart, flag, cfg["t_grid"], fd, tolerance=cfg["tolerance"] * scale,
                              extrapolate=cfg["extrapolate"])
    return CheckResult("weyl", spec.name, rep.passed, rep.to_json(), cfg,
                       f"slope {rep.slope:.4f}, expected {rep.expected_slope:g} +- {rep.tolerance:g}")


def check_damping(spec, cfg, scale, seed):
    """Sup-norm convergence rate of the damped rescaled fields to the hat fields."""
    flag = spec.flag()
    S = spec.nilpotent(spec.chart(flag))
    gamma = float(cfg["gamma"])
    cut = CutoffSpec(**cfg["cutoff"])
    fits = []
    for i, X in enumerate(S.pushed_fields):
        slope, rms, sups = damping_rate_fit(X, S, gamma, cfg["eps_grid"], cutoff=cut, n_points=int(cfg["n_points"]))
        if np.all(sups == 0):
            continue
        fits.append({"field": i, "slope": slope, "rms": rms, "sups": sups})
    nominal = 1 - gamma * S.r
    if not fits:
        return CheckResult("damping", spec.name, True, {"fits": [], "nominal": nominal}, cfg,
                           "fields are already homogeneous; nothing to damp")
    slope = min(f["slope"] for f in fits)
    if cfg["expected"] is not None:
        ok = abs(slope - float(cfg["expected"])) <= cfg["tolerance"] * scale
        why = f"slope {slope:.4f} vs expected {cfg['expected']} +- {cfg['tolerance'] * scale:g}"
    else:
        ok = slope >= nominal - cfg["bound_slack"] * scale
        why = f"slope {slope:.4f} vs lower bound {nominal - cfg['bound_slack'] * scale:.4f}"
    return CheckResult("damping", spec.name, ok, {"fits": fits, "slope": slope, "nominal": nominal}, cfg, why)


def check_coercivity(spec, cfg, scale, seed):
    """``min <x>^{2r} lambda_min(P P^T)`` for the hat frame plus its brackets up to depth ``r``."""
    flag = spec.flag()
    S = spec.nilpotent(spec.chart(flag))
    frame = bracket_closure(S.hat_fields, S.r)
    c, arg, lam, grid = hormander_coercivity(frame, S.r, weights=S.weights, radius=cfg["radius"],
                                             n_points=int(cfg["n_points"]), seed=int(cfg["seed"]))
    return CheckResult("coercivity", spec.name, c > 0,
                       {"c": c, "argmin": arg, "n_points": len(grid), "frame_size": len(frame),
                        "lambda_min_min": float(lam.min())}, cfg, f"c = {c:.6g}")


def _duhamel_grid(spec, cfg, box):
    h = cfg["grid_h"] if cfg["grid_h"] is not None else _default_grid(spec.dim)
    return GridSpec(box[0], box[1], h)


def check_duhamel(spec, cfg, scale, seed):
    """``C_1(t)`` by midpoint quadrature: identity-symbol consistency and vanishing at the origin diagonal."""
    flag = spec.flag()
    S = spec.nilpotent(spec.chart(flag))
    box = _box(spec, cfg)
    hat = _hat_model(spec, S, box)
    grid = _duhamel_grid(spec, cfg, box)
    t = float(cfg["t"])
    targets = np.array([np.zeros(spec.dim)] + [list(map(float, y)) for y in cfg["targets"]])
    src = np.zeros(spec.dim)
    ident = DiffOperator.multiplication(MultiPoly.constant(spec.dim, 1))
    steps = 2 * int(cfg["n_nodes"]) * int(cfg["steps_per_node"])
    run = fd_run_cached(hat, grid, t, src, t / steps)
    fd_vals, fd_err, _ = run.sample(t, targets)
    res_i = duhamel_c1_kernel(hat, grid, ident, t, src, targets, int(cfg["n_nodes"]), int(cfg["steps_per_node"]),
                              estimate_error=False)
    gap_i = np.abs(res_i.values - t * fd_vals)
    bound_i = cfg["identity_factor"] * scale * t * fd_err
    ok_i = bool(np.all(gap_i <= bound_i))
    sym = symbols_from_structure(S, spec.potential)
    res = duhamel_c1_kernel(hat, grid, sym.A1, t, src, targets, int(cfg["n_nodes"]), int(cfg["steps_per_node"]))
    c0, e0 = float(res.values[0]), float(res.error[0])
    ok_0 = abs(c0) <= cfg["origin_factor"] * scale * e0
    metrics = {"identity_gap": gap_i, "identity_bound": bound_i, "identity_ok": ok_i,
               "A1": sym.A1.to_str(), "A1_degree_ok": sym.degree_ok, "c1_values": res.values,
               "c1_error": res.error, "c1_origin": c0, "c1_origin_error": e0, "origin_ok": ok_0,
               "targets": targets}
    return CheckResult("duhamel", spec.name, ok_i and ok_0 and sym.degree_ok, metrics, cfg,
                       f"identity gap {gap_i.max():.2e} (bound {bound_i.max():.2e}); C1(0,0) = {c0:.2e} +- {e0:.2e}")


def homogeneity_samples(weights, step):
    """Origin, ``step`` along each axis and ``step`` on the diagonal."""
    n = len(weights)
    pts = [np.zeros(n)]
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        pts.append(e)
    pts.append(np.full(n, float(step)))
    return pts


def check_homogeneity(spec, cfg, scale, seed):
    """FD estimate of the nilpotent kernel against ``e(t,x,x') = l^Q e(l^2 t, delta_l x, delta_l x')``.

    For ``l > 1`` the samples are ``(t/l^2, 0, p)``; for ``l < 1`` they are
    ``(t, 0, delta_{1/l} p)``. Both sides then live at times ``t`` and
    ``t/l^2`` of a single run, at points that are nodes of the 2h grid.
    The run goes to ``run_t`` so it can be shared with the Weyl check; pick
    ``t`` and ``t/l^2`` as multiples of ``2 dt`` or they get no time-step error.
    """
    flag = spec.flag()
    S = spec.nilpotent(spec.chart(flag))
    fd = _fill_grid(cfg["fd"], spec.dim)
    box = _box(spec, fd)
    hat = _hat_model(spec, S, box)
    t = float(cfg["t"])
    w = np.asarray(S.weights, float)
    small = homogeneity_samples(S.weights, cfg["sample_step"])
    samples, times, targets = [], {t}, []
    for lam in (float(v) for v in cfg["lambdas"]):
        big = max(lam, 1 / lam)
        lifted = [p * big ** w for p in small]
        t_lo = t / big ** 2
        times.add(t_lo)
        targets += small + lifted
        for p, q in zip(small, lifted):
            samples.append(((t_lo, np.zeros(spec.dim), p) if lam > 1 else (t, np.zeros(spec.dim), q), lam))
    grid = GridSpec(box[0], box[1], fd["grid_h"])
    record = tuple(sorted(times | {float(r) for r in fd.get("record", ())}))
    run_t = max(t, float(cfg.get("run_t") or t))
    run = fd_run_cached(hat, grid, run_t, np.zeros(spec.dim), run_t / int(fd["dt_ratio"]), record=record)
    tab = KernelTable.from_estimates(run.estimate(np.unique(np.array(targets), axis=0)))
    results = [check_hat_homogeneity(tab, [smp], S.weights, S.Q, [lam]) for smp, lam in samples]
    max_ratio = max(r.max_ratio for r in results)
    max_res = max(r.max_residual for r in results)
    ok = max_ratio <= cfg["factor"] * scale
    rows = [{"t": smp[0], "x_prime": smp[2], "lambda": lam, "residual": r.max_residual, "ratio": r.max_ratio}
            for (smp, lam), r in zip(samples, results)]
    return CheckResult("homogeneity", spec.name, ok, {"max_residual": max_res, "max_ratio": max_ratio, "samples": rows},
                       cfg, f"max residual {max_res:.3e}, max residual/error {max_ratio:.2f} "
                            f"(bound {cfg['factor'] * scale:g})")


CHECKS = {
    "limit": check_limit,
    "expansion": check_expansion,
    "kac": check_kac,
    "weyl": check_weyl,
    "damping": check_damping,
    "coercivity": check_coercivity,
    "duhamel": check_duhamel,
    "homogeneity": check_homogeneity,
}


def run_check(name, spec, overrides=None, tolerance_scale=1.0, seed=0):
    if name not in CHECKS:
        raise KeyError(f"unknown check {name!r}; choose from {', '.join(CHECKS)}")
    if tolerance_scale <= 0:
        raise ValueError("tolerance scale must be positive")
    cfg = _merge(DEFAULTS[name], overrides)
    return CHECKS[name](spec, cfg, float(tolerance_scale), int(seed))
