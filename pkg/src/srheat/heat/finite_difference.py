"""Dirichlet finite-difference heat semigroup on a uniform grid.

The sum of squares is discretised as ``-1/2 (B+^T B+ + B-^T B-)`` with
``B+- = sum_j diag(a_j) D_j^+-`` built from one-sided differences. This is
symmetric negative semidefinite by construction and second order
consistent. Fields that are not divergence free get the extra centred term
``-(div a) a.grad``. Time stepping is Crank-Nicolson whose first two steps are replaced by four
implicit-Euler half steps (Rannacher), which damps the Dirac initial datum.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from ..errors import GridError, StabilityError
from .model import KernelEstimate

__all__ = ["GridSpec", "FDSolver", "FDRun", "fd_kernel", "fd_run_cached", "clear_run_cache", "DIRECT_SOLVE_LIMIT"]

DIRECT_SOLVE_LIMIT = 250_000  # unknowns; above this, or in 3-D and up, CG/BiCGSTAB is used


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Uniform grid ``lo + h * k`` on a box; ``h`` may differ per axis."""

    lo: np.ndarray
    hi: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), lo.shape).copy()
        h = np.broadcast_to(np.asarray(self.h, dtype=float), lo.shape).copy()
        if np.any(h <= 0) or np.any(hi <= lo):
            raise GridError("grid needs h > 0 and hi > lo")
        n = (hi - lo) / h
        if np.any(np.abs(n - np.round(n)) > 1e-9 * np.maximum(1, n)):
            raise GridError(f"box length is not a multiple of h on some axis: {n}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "h", h)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def shape(self):
        return tuple(int(round(v)) + 1 for v in (self.hi - self.lo) / self.h)

    @property
    def interior_shape(self):
        return tuple(s - 2 for s in self.shape)

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def axes(self):
        return [self.lo[j] + self.h[j] * np.arange(s) for j, s in enumerate(self.shape)]

    def interior_axes(self):
        return [a[1:-1] for a in self.axes()]

    def interior_points(self):
        return np.stack(np.meshgrid(*self.interior_axes(), indexing="ij"), axis=-1)

    def node_index(self, point, tol=1e-9):
        """Interior multi-index of ``point``; raises if it is not an interior node."""
        k = (np.asarray(point, float) - self.lo) / self.h
        kr = np.round(k)
        if np.any(np.abs(k - kr) > tol):
            raise GridError(f"point {tuple(point)} is not a grid node")
        idx = tuple(int(v) - 1 for v in kr)
        if any(i < 0 or i >= s for i, s in zip(idx, self.interior_shape)):
            raise GridError(f"point {tuple(point)} is not an interior node")
        return idx

    def coarsen(self):
        return GridSpec(self.lo, self.hi, 2 * self.h)

    def refine(self):
        return GridSpec(self.lo, self.hi, self.h / 2)


def _diff_1d(n, h, kind):
    e = np.ones(n)
    if kind == "+":
        return sp.diags([-e, e[:-1]], [0, 1], shape=(n, n)) / h
    if kind == "-":
        return sp.diags([e, -e[:-1]], [0, -1], shape=(n, n)) / h
    return sp.diags([e[:-1], -e[:-1]], [1, -1], shape=(n, n)) / (2 * h)


def _axis_op(D1, j, shape):
    mats = [sp.identity(s, format="csr") for s in shape]
    mats[j] = D1
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


class FDSolver:
    """Discrete ``Delta`` on the interior nodes of ``grid`` with zero Dirichlet data."""

    def __init__(self, model, grid):
        if grid.dim != model.dim:
            raise GridError("grid and model dimensions differ")
        self.model = model
        self.grid = grid

    @cached_property
    def matrix(self):
        g = self.grid
        shape = g.shape
        pts = np.stack(np.meshgrid(*g.axes(), indexing="ij"), axis=-1).reshape(-1, g.dim)
        Dp = [_axis_op(_diff_1d(s, g.h[j], "+"), j, shape) for j, s in enumerate(shape)]
        Dm = [_axis_op(_diff_1d(s, g.h[j], "-"), j, shape) for j, s in enumerate(shape)]
        Dc = [_axis_op(_diff_1d(s, g.h[j], "c"), j, shape) for j, s in enumerate(shape)]
        N = pts.shape[0]
        L = sp.csr_matrix((N, N))
        for X, f in zip(self.model.fields, self.model.field_funcs):
            a = f(pts)
            Bp = sum(sp.diags(a[:, j]) @ Dp[j] for j in range(g.dim) if np.any(a[:, j]))
            Bm = sum(sp.diags(a[:, j]) @ Dm[j] for j in range(g.dim) if np.any(a[:, j]))
            L = L - 0.5 * (Bp.T @ Bp + Bm.T @ Bm)
            div = X.divergence()
            if not div.is_zero():
                dv = div.lambdify()(pts)
                C = sum(sp.diags(a[:, j]) @ Dc[j] for j in range(g.dim) if np.any(a[:, j]))
                L = L - sp.diags(dv) @ C
        if self.model.drift_func is not None:
            a0 = self.model.drift_func(pts)
            L = L + sum(sp.diags(a0[:, j]) @ Dc[j] for j in range(g.dim) if np.any(a0[:, j]))
        if self.model.potential_func is not None:
            L = L - sp.diags(self.model.potential_func(pts))
        interior = np.zeros(shape, dtype=bool)
        interior[(slice(1, -1),) * g.dim] = True
        idx = np.flatnonzero(interior.ravel())
        L = sp.csr_matrix(L)[idx][:, idx]
        L.eliminate_zeros()
        return L.tocsr()

    @cached_property
    def symmetric(self):
        L = self.matrix
        diff = abs(L - L.T)
        return diff.max() <= 1e-12 * max(abs(L).max(), 1.0)

    def stable_dt_explicit(self):
        """Gershgorin bound on the forward-Euler step."""
        L = self.matrix
        rad = np.asarray(abs(L).sum(axis=1)).ravel()
        return 2.0 / float(rad.max())

    def _solver(self, mat):
        n = mat.shape[0]
        if n <= DIRECT_SOLVE_LIMIT and self.grid.dim <= 2:
            lu = spla.splu(mat.tocsc())
            return lu.solve
        diag = mat.diagonal()
        M = spla.LinearOperator(mat.shape, matvec=lambda v: v / diag)
        iterative = spla.cg if self.symmetric else spla.bicgstab
        state = {"x0": None}

        def solve(b):
            x, info = iterative(mat, b, x0=state["x0"], rtol=1e-11, atol=0.0, M=M, maxiter=5000)
            if info != 0:
                raise StabilityError(f"iterative solver did not converge (info={info})")
            state["x0"] = x
            return x

        return solve

    def evolve(self, v0, t, dt, record=(), mode="forward", scheme="cn", rannacher=True,
               inject=None):
        """Advance ``v0`` to time ``t``. Returns ``(v(t), {time: v(time)})``.

        ``mode="forward"`` uses the transpose (densities in the second kernel
        variable); ``"backward"`` evolves functions of the first variable.
        ``inject(k, v)`` is called after each step ``k`` and may return a
        vector to add to the state (used for Duhamel quadrature).
        """
        L = self.matrix.T.tocsr() if mode == "forward" else self.matrix
        n_steps = int(round(t / dt))
        if n_steps < 1 or abs(n_steps * dt - t) > 1e-9 * t:
            raise GridError(f"t={t} is not a multiple of dt={dt}")
        rec_steps = {}
        for s in record:
            k = int(round(s / dt))
            if abs(k * dt - s) > 1e-9 * max(s, dt):
                raise GridError(f"record time {s} is not a multiple of dt={dt}")
            rec_steps[k] = s
        out = {}
        I = sp.identity(L.shape[0], format="csr")
        v = np.array(v0, dtype=float)
        if 0 in rec_steps:
            out[rec_steps[0]] = v.copy()
        if scheme == "euler":
            limit = self.stable_dt_explicit()
            if dt > limit:
                raise StabilityError(f"forward Euler needs dt <= {limit:.3e}", required_dt=limit)
            for k in range(1, n_steps + 1):
                v = v + dt * (L @ v)
                if inject is not None:
                    add = inject(k, v)
                    if add is not None:
                        v = v + add
                if k in rec_steps:
                    out[rec_steps[k]] = v.copy()
            return v, out
        if scheme != "cn":
            raise ValueError(f"unknown scheme {scheme!r}")
        solve = self._solver((I - 0.5 * dt * L).tocsr())
        explicit = (I + 0.5 * dt * L).tocsr()
        for k in range(1, n_steps + 1):
            if k <= 2 and rannacher:
                v = solve(solve(v))  # implicit Euler, two half steps
            else:
                v = solve(explicit @ v)
            if inject is not None:
                add = inject(k, v)
                if add is not None:
                    v = v + add
            if k in rec_steps:
                out[rec_steps[k]] = v.copy()
        return v, out

    def dirac(self, point, mode="forward"):
        g = self.grid
        idx = g.node_index(point)
        v = np.zeros(int(np.prod(g.interior_shape)))
        flat = np.ravel_multi_index(idx, g.interior_shape)
        scale = 1.0 / g.cell_volume
        if mode == "backward":
            scale /= float(self.model.h(np.asarray(point, float)[None, :])[0])
        v[flat] = scale
        return v

    def sample(self, v, targets):
        """Values of a grid vector at ``targets`` (exact at nodes, linear otherwise)."""
        g = self.grid
        arr = v.reshape(g.interior_shape)
        targets = np.atleast_2d(np.asarray(targets, float))
        k = (targets - g.lo) / g.h
        on_node = np.all(np.abs(k - np.round(k)) < 1e-9, axis=1)
        out = np.empty(len(targets))
        if np.any(on_node):
            idx = np.round(k[on_node]).astype(int) - 1
            inside = np.all((idx >= 0) & (idx < np.array(g.interior_shape)), axis=1)
            vals = np.zeros(len(idx))
            vals[inside] = arr[tuple(idx[inside].T)]
            out[on_node] = vals
        if np.any(~on_node):
            padded = np.pad(arr, 1)
            interp = RegularGridInterpolator(g.axes(), padded, bounds_error=False, fill_value=0.0)
            out[~on_node] = interp(targets[~on_node])
        return out


class FDRun:
    """One Dirac-start run kept in memory so it can be sampled repeatedly.

    With ``estimate_error`` the same run is repeated on the ``2h`` grid and
    with ``2 dt``; states at ``t`` and at every ``record`` time are kept for
    all three. Record times that are not multiples of ``2 dt`` get no
    time-step error term.
    """

    def __init__(self, model, grid, t, source, dt=None, mode="forward", scheme="cn", record=(),
                 estimate_error=True):
        self.model, self.grid = model, grid
        self.t = float(t)
        self.source = np.asarray(source, float)
        self.dt = self.t / 200 if dt is None else float(dt)
        self.mode, self.scheme = mode, scheme
        self.record = tuple(sorted(float(r) for r in record if float(r) != self.t))
        self.estimate_error = estimate_error
        self.solver, self.states = self._run(grid, self.dt, self.record)
        self.coarse_solver = self.coarse_states = None
        self.dt2_states = {}
        if estimate_error:
            try:
                self.coarse_solver, self.coarse_states = self._run(grid.coarsen(), self.dt, self.record)
            except GridError as exc:
                raise GridError(f"the source must also be a node of the 2h grid: {exc}") from exc
            rec2 = tuple(r for r in self.record if _is_multiple(r, 2 * self.dt))
            if _is_multiple(self.t, 2 * self.dt):
                _, self.dt2_states = self._run(grid, 2 * self.dt, rec2)

    def _run(self, grid, dt, record):
        solver = FDSolver(self.model, grid)
        vt, rec = solver.evolve(solver.dirac(self.source, self.mode), self.t, dt, record=record,
                                mode=self.mode, scheme=self.scheme)
        rec[self.t] = vt
        return solver, rec

    @property
    def nbytes(self):
        return sum(v.nbytes for d in (self.states, self.coarse_states or {}, self.dt2_states) for v in d.values())

    @property
    def times(self):
        return tuple(sorted(self.states))

    def _measure(self, vals, pts):
        # forward densities come out w.r.t. Lebesgue in the target variable
        return vals / self.model.h(pts) if self.mode == "forward" else vals

    def sample(self, t, targets):
        """``(values, error, extrapolated)`` at recorded time ``t``; the last two may be ``None``."""
        t = float(t)
        key = min(self.states, key=lambda s: abs(s - t))
        if abs(key - t) > 1e-12 * max(1.0, t):
            raise GridError(f"time {t} was not recorded; available {self.times}")
        targets = np.atleast_2d(np.asarray(targets, float))
        vals = self._measure(self.solver.sample(self.states[key], targets), targets)
        if not self.estimate_error:
            return vals, None, None
        # off-node targets are interpolated linearly on the 2h grid
        cv = self._measure(self.coarse_solver.sample(self.coarse_states[key], targets), targets)
        err = np.abs(vals - cv) / 3
        if key in self.dt2_states:
            v2 = self._measure(self.solver.sample(self.dt2_states[key], targets), targets)
            err = err + np.abs(vals - v2) / 3
        err = err + 1e-10 * float(np.abs(vals).max(initial=0.0))
        return vals, err, (4 * vals - cv) / 3

    def negative_flag(self, t=None):
        v = self.states[self.t if t is None else t]
        return float(v.min()) < -1e-8 * float(np.abs(v).max())

    def estimate(self, targets=None, t=None, history=True):
        """:class:`KernelEstimate` at ``t`` (default the final time) with the other times in ``meta``."""
        t = self.t if t is None else float(t)
        if targets is None:
            targets = self.grid.interior_points().reshape(-1, self.grid.dim)
        targets = np.atleast_2d(np.asarray(targets, float))
        vals, err, ext = self.sample(t, targets)
        negative = self.negative_flag()
        if negative:
            warnings.warn("finite-difference kernel has significantly negative values", RuntimeWarning,
                          stacklevel=3)
        meta = {"grid_h": self.grid.h.tolist(), "grid_lo": self.grid.lo.tolist(),
                "grid_hi": self.grid.hi.tolist(), "dt": self.dt, "negative_flag": negative,
                "mode": self.mode, "unknowns": self.solver.matrix.shape[0]}
        meta["error"] = np.zeros_like(vals) if err is None else err
        if ext is not None:
            # Richardson combination of the h and 2h grids
            meta["extrapolated"] = ext
        others = [s for s in self.times if s != t]
        if history and others:
            meta["history"] = {}
            for s in others:
                v, e, x = self.sample(s, targets)
                row = {"values": v, "error": np.zeros_like(v) if e is None else e}
                if x is not None:
                    row["extrapolated"] = x
                meta["history"][s] = row
        return KernelEstimate("FD", t, self.source, targets, vals, None,
                              measure_tag="mu" if self.model.density is not None else "lebesgue", meta=meta)


def _is_multiple(s, dt):
    k = round(s / dt)
    return k >= 1 and abs(k * dt - s) <= 1e-9 * max(s, dt)


def fd_kernel(model, t, grid_spec, source, targets=None, dt=None, mode="forward",
              estimate_error=True, scheme="cn", record=()):
    """Kernel ``e(t, source, .)`` (forward) or ``e(t, ., source)`` (backward) w.r.t. ``mu``.

    The error bar is ``|u_h - u_2h|/3 + |u_dt - u_2dt|/3`` (both second
    order) plus a linear-algebra floor of ``1e-10 * max|u|``. ``record``
    returns additional estimates at intermediate times in ``meta["history"]``
    and ``meta["extrapolated"]`` holds ``(4 u_h - u_2h)/3``.
    """
    run = FDRun(model, grid_spec, t, source, dt=dt if dt is not None else t / 200, mode=mode,
                scheme=scheme, record=record, estimate_error=estimate_error)
    return run.estimate(targets)


_RUN_CACHE = {}
# runs are evicted oldest first once their stored states exceed this many bytes
_RUN_CACHE_BYTES = int(float(os.environ.get("SRHEAT_FD_CACHE_MB", "1024")) * 2 ** 20)


def fd_run_cached(model, grid, t, source, dt, mode="forward", record=(), estimate_error=True):
    """:class:`FDRun` memoised on the model fingerprint and all run parameters.

    A cached run is reused when its recorded times include the requested
    ones, so checks that need the same expensive solve share it.
    """
    key = (model.fingerprint(), tuple(grid.lo), tuple(grid.hi), tuple(grid.h), float(t), float(dt),
           tuple(np.asarray(source, float)), mode, bool(estimate_error))
    want = {float(r) for r in record if float(r) != float(t)}
    run = _RUN_CACHE.get(key)
    if run is not None and want <= set(run.record):
        _RUN_CACHE[key] = _RUN_CACHE.pop(key)  # most recently used goes last
        return run
    if run is not None:
        want |= set(run.record)
    run = FDRun(model, grid, t, source, dt=dt, mode=mode, record=sorted(want), estimate_error=estimate_error)
    _RUN_CACHE.pop(key, None)
    _RUN_CACHE[key] = run
    while len(_RUN_CACHE) > 1 and sum(r.nbytes for r in _RUN_CACHE.values()) > _RUN_CACHE_BYTES:
        _RUN_CACHE.pop(next(iter(_RUN_CACHE)))
    return run


def clear_run_cache():
    _RUN_CACHE.clear()
