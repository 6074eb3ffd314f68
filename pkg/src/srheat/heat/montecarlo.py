"""Monte Carlo heat kernel from the Stratonovich diffusion.

The diffusion ``dx = sqrt(2) sum X_i(x) o dw_i + X_0(x) dt`` has generator
``sum X_i^2 + X_0``. The Stratonovich form is integrated with Euler-Heun;
the equivalent Ito SDE would carry the extra drift
``sum_i (DX_i) X_i``, which the predictor-corrector average supplies
implicitly. Potentials enter through the Feynman-Kac weight
``exp(-int V ds)`` (trapezoid rule). Densities come from a product Gaussian
KDE whose bandwidth on axis ``j`` is ``b^{w_j}``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np

from ..errors import ModelError
from ..flag import compute_flag
from ..polynomials import MultiPoly, numpy_expr
from .model import KernelEstimate

__all__ = ["mc_kernel", "simulate_paths"]

CHUNK = 500_000


def _threads():
    try:
        return max(1, int(os.environ.get("SRHEAT_THREADS", "1")))
    except ValueError:
        return 1


def _weights_for(model, source):
    if model.weights is not None:
        return np.asarray(model.weights, float)
    q = [Fraction(str(float(c))) for c in source]
    return np.asarray(compute_flag(model.fields, q).weights, float)


def _compile_step(model):
    """Generate ``noise(xs, dW)``, ``drift(xs)``, ``pot(xs)`` on per-coordinate arrays."""
    d = model.dim
    names = [f"x[{j}]" for j in range(d)]
    lines = ["def noise(x, dW):", "    out = []"]
    for j in range(d):
        terms = []
        for i, X in enumerate(model.fields):
            c = X.components[j]
            if c.is_zero():
                continue
            if c == MultiPoly.constant(d, 1):
                terms.append(f"dW[{i}]")
            else:
                terms.append(f"({numpy_expr(c, names)})*dW[{i}]")
        lines.append(f"    out.append({' + '.join(terms) if terms else 'zero'})")
    lines.append("    return out")
    lines.append("def drift(x, h):")
    if model.drift is None or model.drift.is_zero():
        lines.append("    return None")
    else:
        comps = [f"h*({numpy_expr(c, names)}) + zero" for c in model.drift.components]
        lines.append(f"    return [{', '.join(comps)}]")
    lines.append("def pot(x):")
    if model.potential is None or model.potential.is_zero():
        lines.append("    return None")
    else:
        lines.append(f"    return ({numpy_expr(model.potential, names)}) + zero")
    return "\n".join(lines)


def simulate_paths(model, t, source, n, dt, rngs, kill_on_exit=True):
    """Simulate ``n`` paths split evenly over the generators in ``rngs``.

    Generator ``b`` fills rows ``b*n/len(rngs) ...`` of the noise at every
    step, so each batch sees the same stream however batches are grouped.
    Returns endpoints (n, d), log Feynman-Kac weights, survival and
    explosion flags.
    """
    d, m = model.dim, len(model.fields)
    steps = int(round(t / dt))
    if steps < 1:
        raise ValueError("dt must not exceed t")
    nb = len(rngs)
    if n % nb:
        raise ValueError("n must be a multiple of the number of generators")
    per = n // nb
    h = t / steps
    sq = np.sqrt(2.0 * h)
    lo, hi = model.box_lo, model.box_hi
    width = hi - lo
    far_lo, far_hi = lo - 10 * width, hi + 10 * width
    scope = {"np": np, "zero": np.zeros(n)}
    exec(_compile_step(model), scope)
    noise, drift, pot = scope["noise"], scope["drift"], scope["pot"]

    x = [np.full(n, float(c)) for c in source]
    logw = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    exploded = np.zeros(n, dtype=bool)
    buf = np.empty((n, m))
    v_old = pot(x)
    for _ in range(steps):
        for b, g in enumerate(rngs):
            g.standard_normal(out=buf[b * per:(b + 1) * per])
        buf *= sq
        buf[~alive] = 0.0  # frozen paths stop moving
        dW = [buf[:, i] for i in range(m)]
        inc0 = noise(x, dW)
        f0 = drift(x, h)
        if f0 is not None:
            f0 = [a * alive for a in f0]
            pred = [xj + a + b for xj, a, b in zip(x, f0, inc0)]
        else:
            pred = [xj + a for xj, a in zip(x, inc0)]
        inc1 = noise(pred, dW)
        f1 = drift(pred, h)
        if f1 is not None:
            f1 = [a * alive for a in f1]
            xn = [xj + 0.5 * (a0 + a1 + b0 + b1) for xj, a0, a1, b0, b1 in zip(x, f0, f1, inc0, inc1)]
        else:
            xn = [xj + 0.5 * (b0 + b1) for xj, b0, b1 in zip(x, inc0, inc1)]
        if v_old is not None:
            v_new = pot(xn)
            logw -= np.where(alive, 0.5 * h * (v_old + v_new), 0.0)
            v_old = v_new
        exit_now = np.zeros(n, dtype=bool)
        boom = np.zeros(n, dtype=bool)
        for j in range(d):
            xj = xn[j]
            boom |= ~np.isfinite(xj) | (xj < far_lo[j]) | (xj > far_hi[j])
            if kill_on_exit:
                exit_now |= (xj < lo[j]) | (xj > hi[j])
        boom &= alive
        exploded |= boom
        dead = (exit_now | boom) & alive
        alive &= ~dead
        for j in range(d):
            xj = xn[j]
            xj[boom] = x[j][boom]  # keep frozen values finite
            x[j] = xj
    return np.stack(x, axis=-1), logw, alive, exploded


def _kde(points, wts, targets, bw):
    """Product Gaussian KDE sums (not yet divided by the path count)."""
    norm = 1.0 / np.prod(np.sqrt(2 * np.pi) * bw)
    out = np.empty(len(targets))
    for k, y in enumerate(targets):
        z = (points - y) / bw
        out[k] = norm * np.sum(wts * np.exp(-0.5 * np.sum(z * z, axis=1)))
    return out


def mc_kernel(model, t, source, targets, n_paths=100_000, dt=None, bandwidth=None, seed=0,
              n_batches=20, richardson=True, kill_on_exit=True):
    """Monte Carlo estimate of ``e(t, source, targets)`` w.r.t. the model measure.

    Each batch draws from its own stream ``SeedSequence(seed, spawn_key=(b,))``
    and batches are reduced in index order, so results do not depend on
    ``SRHEAT_THREADS``. The error bar is the batch-means standard error.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if n_paths < 1000:
        raise ValueError("n_paths must be at least 1000")
    if n_batches < 20:
        raise ValueError("need at least 20 batches for batch-means errors")
    dt = t / 500 if dt is None else dt
    if dt > t / 50 * (1 + 1e-12):
        raise ValueError("dt must be at most t/50")
    source = np.asarray(source, float)
    if source.shape != (model.dim,):
        raise ModelError("source has the wrong dimension")
    if np.any(source < model.box_lo) or np.any(source > model.box_hi):
        raise ModelError("source lies outside the working box")
    targets = np.atleast_2d(np.asarray(targets, float))
    w = _weights_for(model, source)
    per = n_paths // n_batches
    seed = int(seed)

    # whole batches are simulated together in chunks of about CHUNK paths
    bpc = max(1, min(n_batches, CHUNK // max(per, 1)))
    groups = [list(range(s, min(s + bpc, n_batches))) for s in range(0, n_batches, bpc)]

    def run(group):
        rngs = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(b,))))
                for b in group]
        x, logw, alive, boom = simulate_paths(model, t, source, per * len(group), dt, rngs, kill_on_exit)
        return [(x[k * per:(k + 1) * per], logw[k * per:(k + 1) * per],
                 alive[k * per:(k + 1) * per], boom[k * per:(k + 1) * per]) for k in range(len(group))]

    nthreads = _threads()
    if nthreads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            chunks = list(pool.map(run, groups))
    else:
        chunks = [run(g) for g in groups]
    results = [r for c in chunks for r in c]

    alive_all = np.concatenate([r[2] for r in results])
    pts_all = np.concatenate([r[0] for r in results])[alive_all]
    if bandwidth is None:
        unit = w == 1
        sig = float(np.mean(np.std(pts_all[:, unit], axis=0))) if len(pts_all) > 1 else 1.0
        # with the Richardson combination the bias is O(b^4), so the
        # variance-bias balance moves to n^(-1/(Q+8))
        rate = w.sum() + (8 if richardson else 4)
        bandwidth = 1.06 * sig * (per * n_batches) ** (-1.0 / rate)
    bw = float(bandwidth) ** w

    batch_vals = []
    for x, logw, alive, _ in results:
        pts, wts = x[alive], np.exp(logw[alive])
        p1 = _kde(pts, wts, targets, bw) / per
        if richardson:
            # shrink b itself, so axis j shrinks by 2^(-w_j/2) and the
            # bias expansion in powers of b^2 loses its leading term
            p2 = _kde(pts, wts, targets, (float(bandwidth) / np.sqrt(2.0)) ** w) / per
            batch_vals.append(2 * p2 - p1)
        else:
            batch_vals.append(p1)
    batch_vals = np.array(batch_vals)
    leb = batch_vals.mean(axis=0)
    se = batch_vals.std(axis=0, ddof=1) / np.sqrt(n_batches)
    hvals = model.h(targets)
    meta = {
        "n_paths": per * n_batches,
        "n_batches": n_batches,
        "dt": dt,
        "bandwidth": float(bandwidth),
        "axis_bandwidths": bw.tolist(),
        "richardson": richardson,
        "killed": int(np.sum(~alive_all)),
        "exploded": int(sum(int(r[3].sum()) for r in results)),
        "seed": seed,
    }
    return KernelEstimate("MC", float(t), source, targets, leb / hvals, se / hvals,
                          measure_tag="mu" if model.density is not None else "lebesgue", meta=meta)
