"""Heat operator data ``Delta = sum X_i^2 + X_0 - V`` and kernel estimates."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property

import numpy as np

from ..errors import DimensionMismatch, ModelError, NonpositiveDensity
from ..polynomials import MultiPoly, PolyVectorField, Weights, dilate_function, dilate_pullback

__all__ = ["HeatModel", "KernelEstimate", "rescale_model", "model_in_chart"]


def _box(lo, hi, dim):
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,)).copy()
    if np.any(hi <= lo):
        raise ModelError(f"empty box: lo={lo}, hi={hi}")
    return lo, hi


@dataclass(frozen=True, eq=False)
class HeatModel:
    """Operator data on an axis-aligned working box.

    ``density`` is ``h`` in ``mu = h dx`` (``None`` means Lebesgue) and
    ``weights`` are the flag weights at the base point, used for dilations
    and dilation-adapted bandwidths.
    """

    fields: tuple
    box_lo: np.ndarray
    box_hi: np.ndarray
    drift: PolyVectorField | None = None
    potential: MultiPoly | None = None
    density: MultiPoly | None = None
    weights: Weights | None = None
    name: str = "model"

    def __post_init__(self):
        fields = tuple(self.fields)
        if not fields:
            raise ModelError("a heat model needs at least one field")
        dim = fields[0].dim
        if any(X.dim != dim for X in fields):
            raise DimensionMismatch("fields live in different dimensions")
        for extra in (self.drift, self.potential, self.density):
            if extra is not None and extra.dim != dim:
                raise DimensionMismatch("drift/potential/density dimension differs from the fields")
        lo, hi = _box(self.box_lo, self.box_hi, dim)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)
        if self.weights is not None:
            object.__setattr__(self, "weights", Weights(self.weights))
            if len(self.weights) != dim:
                raise DimensionMismatch("weights and dimension differ")

    @property
    def dim(self):
        return self.fields[0].dim

    @property
    def box(self):
        return self.box_lo, self.box_hi

    def with_box(self, lo, hi):
        return replace(self, box_lo=np.asarray(lo, float), box_hi=np.asarray(hi, float))

    # numerical evaluators, built once
    @cached_property
    def field_funcs(self):
        return [X.lambdify() for X in self.fields]

    @cached_property
    def drift_func(self):
        return None if self.drift is None or self.drift.is_zero() else self.drift.lambdify()

    @cached_property
    def potential_func(self):
        return None if self.potential is None or self.potential.is_zero() else self.potential.lambdify()

    @cached_property
    def density_func(self):
        return None if self.density is None else self.density.lambdify()

    def h(self, x):
        x = np.asarray(x, dtype=float)
        if self.density_func is None:
            return np.ones(x.shape[:-1])
        return self.density_func(x)

    def validate(self, n_per_axis=None):
        """Grid scan of the box: ``h > 0`` and ``V`` finite. Returns ``(min h, min V)``."""
        n_per_axis = n_per_axis or max(3, int(round(1e5 ** (1 / self.dim))))
        axes = [np.linspace(a, b, n_per_axis) for a, b in zip(self.box_lo, self.box_hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        hmin = float(np.min(self.h(pts)))
        if hmin <= 0:
            raise NonpositiveDensity(f"density reaches {hmin} on the working box")
        vmin = float(np.min(self.potential_func(pts))) if self.potential_func else 0.0
        if not np.isfinite(vmin):
            raise ModelError("potential is not bounded below on the box")
        return hmin, vmin

    def is_divergence_free(self):
        """True when every field is divergence free for ``mu`` (the sum-of-squares part is symmetric)."""
        h = self.density if self.density is not None else MultiPoly.constant(self.dim, 1)
        for X in self.fields:
            div = MultiPoly.zero(self.dim)
            for j, a in enumerate(X.components):
                div = div + (a * h).diff(j)
            if not div.is_zero():
                return False
        return True

    def is_self_adjoint(self):
        return self.is_divergence_free() and (self.drift is None or self.drift.is_zero())

    def fingerprint(self):
        """Stable JSON description used for hashing in run manifests."""
        return json.dumps(
            {
                "fields": [X.to_json() for X in self.fields],
                "drift": None if self.drift is None else self.drift.to_json(),
                "potential": None if self.potential is None else self.potential.to_json(),
                "density": None if self.density is None else self.density.to_json(),
                "box": [self.box_lo.tolist(), self.box_hi.tolist()],
            },
            sort_keys=True,
        )


@dataclass(frozen=True, eq=False)
class KernelEstimate:
    method: str
    t: float
    source: np.ndarray
    targets: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None
    measure_tag: str = "lebesgue"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "source", np.asarray(self.source, dtype=float))
        object.__setattr__(self, "targets", np.atleast_2d(np.asarray(self.targets, dtype=float)))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))

    @property
    def error(self):
        """Per-point error bar: MC standard error or FD error estimate."""
        if self.stderr is not None:
            return self.stderr
        return np.asarray(self.meta.get("error", np.zeros_like(self.values)), dtype=float)

    def with_values(self, values, stderr=None, **changes):
        return replace(self, values=np.asarray(values, float), stderr=stderr, **changes)

    def to_json(self):
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return {
            "method": self.method,
            "t": self.t,
            "source": self.source.tolist(),
            "targets": self.targets.tolist(),
            "values": self.values.tolist(),
            "stderr": None if self.stderr is None else self.stderr.tolist(),
            "measure_tag": self.measure_tag,
            "meta": clean(self.meta),
        }

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        d = self.targets.shape[1]
        wr.writerow([f"x{j + 1}" for j in range(d)] + ["value", "error"])
        err = self.error
        for y, v, e in zip(self.targets, self.values, err):
            wr.writerow([repr(float(c)) for c in y] + [repr(float(v)), repr(float(e))])
        return buf.getvalue()


def rescale_model(model, weights, eps, box=None):
    """Model of ``eps^2 delta_eps^* Delta (delta_eps)_*`` with density ``h(delta_eps x)``.

    Its kernel at ``(tau, x, x')`` equals ``|eps|^Q e(eps^2 tau, delta_eps x, delta_eps x')``.
    ``box`` defaults to the preimage of the original box under ``delta_eps``.
    """
    eps = Fraction(eps) if isinstance(eps, float) else Fraction(eps)
    if eps == 0:
        raise ValueError("eps must be nonzero")
    w = Weights(weights)
    fields = tuple(dilate_pullback(X, w, eps, 1) for X in model.fields)
    drift = None if model.drift is None else dilate_pullback(model.drift, w, eps, 2)
    pot = None if model.potential is None else dilate_function(model.potential, w, eps, 2)
    dens = None if model.density is None else dilate_function(model.density, w, eps, 0)
    if box is None:
        s = np.power(float(abs(eps)), -np.asarray(w, float))
        lo, hi = model.box_lo * s, model.box_hi * s
    else:
        lo, hi = box
    return HeatModel(fields, lo, hi, drift, pot, dens, w, name=f"{model.name}@eps={eps}")


def model_in_chart(model, chart, box=None):
    """Push the model through a privileged chart (jets exact to the chart truncation).

    The density becomes ``h(F(x)) * det DF(x)`` with ``F`` the chart's forward map.
    """
    from ..charts import _shift_poly, jacobian_det_poly, push_field, push_function, shift_field

    if chart.is_translation:
        q = chart.base_point
        fields = tuple(shift_field(X, q) for X in model.fields)
        drift = None if model.drift is None else shift_field(model.drift, q)
        pot = None if model.potential is None else _shift_poly(model.potential, q)
        dens = None if model.density is None else _shift_poly(model.density, q)
        qf = np.array([float(c) for c in q])
        box = box or (model.box_lo - qf, model.box_hi - qf)
        return HeatModel(fields, box[0], box[1], drift, pot, dens, chart.weights, name=model.name)

    fields = tuple(push_field(chart, X) for X in model.fields)
    drift = None if model.drift is None else push_field(chart, model.drift)
    pot = None if model.potential is None else push_function(chart, model.potential)
    h = model.density if model.density is not None else MultiPoly.constant(model.dim, 1)
    det = jacobian_det_poly(chart)
    dens = push_function(chart, h) * det
    dens = MultiPoly(dens.dim, {e: c for e, c in dens.terms.items()
                                if sum(a * b for a, b in zip(e, chart.weights)) <= chart.trunc_order})
    if dens == MultiPoly.constant(model.dim, 1):
        dens = None
    if box is None:
        q = np.array([float(c) for c in chart.base_point])
        box = (model.box_lo - q, model.box_hi - q)
    return HeatModel(fields, box[0], box[1], drift, pot, dens, chart.weights, name=f"{model.name}[chart]")
