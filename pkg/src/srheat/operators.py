"""Second-order differential operators with polynomial coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch
from .polynomials import MultiPoly, PolyVectorField

__all__ = ["DiffOperator", "compose_fields"]


def _clean(d):
    return {k: v for k, v in d.items() if not v.is_zero()}


@dataclass(frozen=True, eq=False)
class DiffOperator:
    """``sum_{j<=k} A_jk d_j d_k + sum_j b_j d_j + c`` with MultiPoly coefficients."""

    dim: int
    second: dict = field(default_factory=dict)  # (j, k) with j <= k
    first: dict = field(default_factory=dict)
    zeroth: MultiPoly | None = None

    def __post_init__(self):
        object.__setattr__(self, "second", _clean({tuple(sorted(k)): v for k, v in self.second.items()}))
        object.__setattr__(self, "first", _clean(dict(self.first)))
        z = self.zeroth if self.zeroth is not None else MultiPoly.zero(self.dim)
        object.__setattr__(self, "zeroth", z)

    @classmethod
    def zero(cls, dim):
        return cls(dim)

    @classmethod
    def multiplication(cls, f):
        return cls(f.dim, zeroth=f)

    @classmethod
    def from_field(cls, X):
        return cls(X.dim, first={j: c for j, c in enumerate(X.components)})

    def is_zero(self):
        return not self.second and not self.first and self.zeroth.is_zero()

    def __add__(self, other):
        if other.dim != self.dim:
            raise DimensionMismatch("operator dimensions differ")
        sec = dict(self.second)
        for k, v in other.second.items():
            sec[k] = sec.get(k, MultiPoly.zero(self.dim)) + v
        fst = dict(self.first)
        for k, v in other.first.items():
            fst[k] = fst.get(k, MultiPoly.zero(self.dim)) + v
        return DiffOperator(self.dim, sec, fst, self.zeroth + other.zeroth)

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        return DiffOperator(
            self.dim,
            {k: v * scalar for k, v in self.second.items()},
            {k: v * scalar for k, v in self.first.items()},
            self.zeroth * scalar,
        )

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, DiffOperator):
            return NotImplemented
        return (self - other).is_zero()

    def __hash__(self):
        return hash((self.dim, frozenset(self.second.items()), frozenset(self.first.items()), self.zeroth))

    def apply(self, f):
        out = self.zeroth * f
        for j, b in self.first.items():
            out = out + b * f.diff(j)
        for (j, k), a in self.second.items():
            out = out + a * f.diff(j).diff(k)
        return out

    def coefficient_degree(self):
        polys = list(self.second.values()) + list(self.first.values()) + [self.zeroth]
        return max((p.degree() for p in polys), default=-1)

    def to_str(self):
        parts = []
        for (j, k), a in sorted(self.second.items()):
            parts.append(f"({a.to_str()})*d{j + 1}d{k + 1}")
        for j, b in sorted(self.first.items()):
            parts.append(f"({b.to_str()})*d{j + 1}")
        if not self.zeroth.is_zero():
            parts.append(f"({self.zeroth.to_str()})")
        return " + ".join(parts) if parts else "0"

    def to_json(self):
        return {
            "dim": self.dim,
            "second": [{"j": j, "k": k, "coef": a.to_json()} for (j, k), a in sorted(self.second.items())],
            "first": [{"j": j, "coef": b.to_json()} for j, b in sorted(self.first.items())],
            "zeroth": self.zeroth.to_json(),
        }

    def grid_matrix(self, grid):
        """Centred-difference matrix on the interior nodes of ``grid`` (zero outside)."""
        from .heat.finite_difference import _axis_op

        shape = grid.shape
        pts = np.stack(np.meshgrid(*grid.axes(), indexing="ij"), axis=-1).reshape(-1, grid.dim)
        N = pts.shape[0]
        h = grid.h

        def d1(j):
            n = shape[j]
            e = np.ones(n - 1)
            return _axis_op(sp.diags([e, -e], [1, -1], shape=(n, n)) / (2 * h[j]), j, shape)

        def d2(j):
            n = shape[j]
            e = np.ones(n)
            return _axis_op(sp.diags([e[:-1], -2 * e, e[:-1]], [1, 0, -1], shape=(n, n)) / h[j] ** 2, j, shape)

        M = sp.csr_matrix((N, N))
        for (j, k), a in self.second.items():
            op = d2(j) if j == k else d1(j) @ d1(k)
            M = M + sp.diags(a.lambdify()(pts)) @ op
        for j, b in self.first.items():
            M = M + sp.diags(b.lambdify()(pts)) @ d1(j)
        if not self.zeroth.is_zero():
            M = M + sp.diags(self.zeroth.lambdify()(pts))
        interior = np.zeros(shape, dtype=bool)
        interior[(slice(1, -1),) * grid.dim] = True
        idx = np.flatnonzero(interior.ravel())
        return sp.csr_matrix(M)[idx][:, idx]


def compose_fields(X, Y):
    """The operator ``f -> X(Y f)`` as a DiffOperator."""
    if X.dim != Y.dim:
        raise DimensionMismatch("field dimensions differ")
    n = X.dim
    second = {}
    for j, a in enumerate(X.components):
        if a.is_zero():
            continue
        for k, b in enumerate(Y.components):
            if b.is_zero():
                continue
            key = (min(j, k), max(j, k))
            second[key] = second.get(key, MultiPoly.zero(n)) + a * b
    first = {k: X.apply(b) for k, b in enumerate(Y.components)}
    return DiffOperator(n, second, first)
