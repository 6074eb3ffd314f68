"""Exact multivariate polynomials and polynomial vector fields.

Coefficients are :class:`fractions.Fraction`. Everything here is immutable;
float arithmetic only happens in :meth:`MultiPoly.lambdify` and the
``evaluate`` helpers when the caller passes floats.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from numbers import Rational

import numpy as np

from .errors import DimensionMismatch

__all__ = [
    "MultiPoly",
    "PolyVectorField",
    "Weights",
    "as_fraction",
    "lie_bracket",
    "dilate_pullback",
    "dilate_function",
    "graded_parts",
    "evaluate",
]


def as_fraction(value):
    """Convert ints, Fractions, decimal strings or floats to an exact Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, (float, np.floating)):
        return Fraction(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to an exact rational")


class Weights(tuple):
    """Nondecreasing tuple of positive integer weights ``w_1 <= ... <= w_n``."""

    def __new__(cls, values):
        vals = tuple(int(v) for v in values)
        if not vals:
            raise ValueError("weights must be nonempty")
        if any(v < 1 for v in vals):
            raise ValueError(f"weights must be positive, got {vals}")
        if any(a > b for a, b in zip(vals, vals[1:])):
            raise ValueError(f"weights must be nondecreasing, got {vals}")
        return super().__new__(cls, vals)

    @property
    def Q(self):
        return sum(self)

    @property
    def r(self):
        return max(self)


class MultiPoly:
    """Polynomial in ``dim`` variables with exact rational coefficients.

    ``terms`` maps exponent tuples to coefficients. Zero coefficients are
    dropped on construction, so two equal polynomials always have equal term
    dictionaries.
    """

    __slots__ = ("dim", "terms", "_hash", "_fn")

    def __init__(self, dim, terms=None):
        dim = int(dim)
        if dim < 1:
            raise ValueError("dim must be positive")
        clean = {}
        for exp, coef in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != dim:
                raise DimensionMismatch(f"exponent {exp} has length {len(exp)}, expected {dim}")
            if any(e < 0 for e in exp):
                raise ValueError(f"negative exponent in {exp}")
            c = as_fraction(coef)
            if c != 0:
                clean[exp] = clean.get(exp, Fraction(0)) + c
                if clean[exp] == 0:
                    del clean[exp]
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "_hash", None)
        object.__setattr__(self, "_fn", None)

    def __setattr__(self, name, value):
        raise AttributeError("MultiPoly is immutable")

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, dim):
        return cls(dim)

    @classmethod
    def constant(cls, dim, value):
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def variable(cls, dim, index):
        exp = [0] * dim
        exp[index] = 1
        return cls(dim, {tuple(exp): 1})

    @classmethod
    def monomial(cls, exp, coef=1):
        return cls(len(exp), {tuple(exp): coef})

    @classmethod
    def variables(cls, dim):
        return tuple(cls.variable(dim, j) for j in range(dim))

    # -- basic protocol -------------------------------------------------
    def is_zero(self):
        return not self.terms

    def __bool__(self):
        return bool(self.terms)

    def __eq__(self, other):
        if isinstance(other, MultiPoly):
            return self.dim == other.dim and self.terms == other.terms
        if isinstance(other, (int, Fraction)):
            return self == MultiPoly.constant(self.dim, other)
        return NotImplemented

    def __hash__(self):
        h = object.__getattribute__(self, "_hash")
        if h is None:
            h = hash((self.dim, frozenset(self.terms.items())))
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self):
        return f"MultiPoly({self.dim}, {self.to_str()!r})"

    def to_str(self, names=None):
        if not self.terms:
            return "0"
        names = names or [f"x{j + 1}" for j in range(self.dim)]
        parts = []
        for exp in sorted(self.terms, key=lambda e: (sum(e), e)):
            c = self.terms[exp]
            mono = "*".join(
                names[j] if e == 1 else f"{names[j]}^{e}" for j, e in enumerate(exp) if e
            )
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{c}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")

    def _coerce(self, other):
        if isinstance(other, MultiPoly):
            if other.dim != self.dim:
                raise DimensionMismatch(f"dims {self.dim} and {other.dim} differ")
            return other
        return MultiPoly.constant(self.dim, as_fraction(other))

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = self._coerce(other)
        terms = dict(self.terms)
        for exp, c in other.terms.items():
            terms[exp] = terms.get(exp, Fraction(0)) + c
        return MultiPoly(self.dim, terms)

    __radd__ = __add__

    def __neg__(self):
        return MultiPoly(self.dim, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, MultiPoly):
            c = as_fraction(other)
            return MultiPoly(self.dim, {e: c * v for e, v in self.terms.items()})
        other = self._coerce(other)
        terms = {}
        for (e1, c1), (e2, c2) in itertools.product(self.terms.items(), other.terms.items()):
            e = tuple(a + b for a, b in zip(e1, e2))
            terms[e] = terms.get(e, Fraction(0)) + c1 * c2
        return MultiPoly(self.dim, terms)

    __rmul__ = __mul__

    def __pow__(self, k):
        k = int(k)
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        out = MultiPoly.constant(self.dim, 1)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    # -- calculus ------------------------------------------------------
    def diff(self, j):
        terms = {}
        for exp, c in self.terms.items():
            if exp[j]:
                e = list(exp)
                e[j] -= 1
                terms[tuple(e)] = c * exp[j]
        return MultiPoly(self.dim, terms)

    def degree(self):
        return max((sum(e) for e in self.terms), default=-1)

    def weighted_degrees(self, weights):
        return {sum(a * w for a, w in zip(e, weights)) for e in self.terms}

    def truncate(self, weights, max_wdeg):
        """Drop monomials whose weighted degree exceeds ``max_wdeg``."""
        return MultiPoly(
            self.dim,
            {e: c for e, c in self.terms.items() if sum(a * w for a, w in zip(e, weights)) <= max_wdeg},
        )

    def truncate_degree(self, max_deg):
        return MultiPoly(self.dim, {e: c for e, c in self.terms.items() if sum(e) <= max_deg})

    def scale_variables(self, factors):
        """Return ``p(f_1 x_1, ..., f_n x_n)`` for exact factors ``f_j``."""
        factors = [as_fraction(f) for f in factors]
        terms = {}
        for exp, c in self.terms.items():
            s = c
            for f, e in zip(factors, exp):
                if e:
                    s *= f**e
            terms[exp] = s
        return MultiPoly(self.dim, terms)

    def compose(self, substitutions):
        """Substitute polynomial ``substitutions[j]`` for variable ``x_j``.

        The substitutions may live in a different dimension; the result has
        their dimension.
        """
        subs = list(substitutions)
        if len(subs) != self.dim:
            raise DimensionMismatch(f"need {self.dim} substitutions, got {len(subs)}")
        out_dim = subs[0].dim
        powers = [dict() for _ in subs]

        def power(j, k):
            cache = powers[j]
            if k not in cache:
                cache[k] = subs[j] ** k
            return cache[k]

        out = MultiPoly.zero(out_dim)
        for exp, c in self.terms.items():
            term = MultiPoly.constant(out_dim, c)
            for j, e in enumerate(exp):
                if e:
                    term = term * power(j, e)
            out = out + term
        return out

    def embed(self, new_dim, offset=0):
        """View as a polynomial in ``new_dim`` variables, placing ours at ``offset``."""
        terms = {}
        for exp, c in self.terms.items():
            e = [0] * new_dim
            e[offset:offset + self.dim] = exp
            terms[tuple(e)] = c
        return MultiPoly(new_dim, terms)

    # -- evaluation ----------------------------------------------------
    def __call__(self, point):
        return self.evaluate(point)

    def evaluate(self, point):
        """Evaluate at one point; exact when the point is rational."""
        if len(point) != self.dim:
            raise DimensionMismatch(f"point has length {len(point)}, expected {self.dim}")
        exact = all(isinstance(p, (int, Fraction, np.integer)) for p in point)
        if exact:
            pt = [as_fraction(p) for p in point]
            total = Fraction(0)
            for exp, c in self.terms.items():
                v = c
                for x, e in zip(pt, exp):
                    if e:
                        v *= x**e
                total += v
            return total
        return float(self.lambdify()(np.asarray(point, dtype=float)[None, :])[0])

    def lambdify(self):
        """Return a vectorised float evaluator ``f(X)`` for ``X`` of shape (..., dim).

        The polynomial is compiled once into straight-line numpy code.
        """
        fn = object.__getattribute__(self, "_fn")
        if fn is None:
            fn = _compile_poly(self)
            object.__setattr__(self, "_fn", fn)
        return fn

    # -- serialization -------------------------------------------------
    def to_json(self):
        return [
            {"exp": list(exp), "num": c.numerator, "den": c.denominator}
            for exp, c in sorted(self.terms.items())
        ]

    @classmethod
    def from_json(cls, dim, data):
        terms = {}
        for item in data:
            exp = tuple(item["exp"])
            c = Fraction(int(item["num"]), int(item.get("den", 1)))
            terms[exp] = terms.get(exp, Fraction(0)) + c
        return cls(dim, terms)


def numpy_expr(p, names):
    """Straight-line expression for ``p`` with variable ``j`` spelled ``names[j]``."""
    pieces = []
    for exp, c in sorted(p.terms.items()):
        factors = [] if c == 1 and any(exp) else [repr(float(c))]
        for j, e in enumerate(exp):
            factors.extend([names[j]] * e)
        pieces.append("*".join(factors))
    return " + ".join(pieces) if pieces else "0.0"


def _compile_poly(p):
    used = sorted({j for exp in p.terms for j, e in enumerate(exp) if e})
    body = numpy_expr(p, [f"x{j}" for j in range(p.dim)])
    src = ["def f(X):", "    X = np.asarray(X, dtype=float)"]
    src += [f"    x{j} = X[..., {j}]" for j in used]
    src.append(f"    return np.zeros(X.shape[:-1]) + ({body})")
    scope = {"np": np}
    exec("\n".join(src), scope)
    return scope["f"]


class PolyVectorField:
    """Vector field ``sum_j a_j(x) d/dx_j`` with polynomial coefficients ``a_j``."""

    __slots__ = ("dim", "components", "_hash")

    def __init__(self, components):
        comps = tuple(components)
        if not comps:
            raise ValueError("a vector field needs at least one component")
        dim = comps[0].dim
        if len(comps) != dim:
            raise DimensionMismatch(f"{len(comps)} components for dimension {dim}")
        if any(c.dim != dim for c in comps):
            raise DimensionMismatch("components live in different dimensions")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name, value):
        raise AttributeError("PolyVectorField is immutable")

    @classmethod
    def zero(cls, dim):
        return cls([MultiPoly.zero(dim)] * dim)

    @classmethod
    def coordinate(cls, dim, j, coef=1):
        """``coef * d/dx_j`` (``coef`` may be a MultiPoly)."""
        comps = [MultiPoly.zero(dim)] * dim
        comps[j] = coef if isinstance(coef, MultiPoly) else MultiPoly.constant(dim, coef)
        return cls(comps)

    def is_zero(self):
        return all(c.is_zero() for c in self.components)

    def __eq__(self, other):
        if not isinstance(other, PolyVectorField):
            return NotImplemented
        return self.components == other.components

    def __hash__(self):
        h = object.__getattribute__(self, "_hash")
        if h is None:
            h = hash(self.components)
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self):
        return f"PolyVectorField({self.to_str()})"

    def to_str(self, names=None):
        names = names or [f"x{j + 1}" for j in range(self.dim)]
        parts = [
            f"({c.to_str(names)})*d/d{names[j]}" for j, c in enumerate(self.components) if c
        ]
        return " + ".join(parts) if parts else "0"

    def _check(self, other):
        if self.dim != other.dim:
            raise DimensionMismatch(f"vector fields of dimension {self.dim} and {other.dim}")

    def __add__(self, other):
        self._check(other)
        return PolyVectorField([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other):
        self._check(other)
        return PolyVectorField([a - b for a, b in zip(self.components, other.components)])

    def __neg__(self):
        return PolyVectorField([-a for a in self.components])

    def __mul__(self, scalar):
        """Multiply by a constant or by a polynomial function."""
        return PolyVectorField([a * scalar for a in self.components])

    __rmul__ = __mul__

    def apply(self, f):
        """Lie derivative of the polynomial ``f`` along this field."""
        if f.dim != self.dim:
            raise DimensionMismatch("function and field dimensions differ")
        out = MultiPoly.zero(self.dim)
        for j, a in enumerate(self.components):
            if a:
                out = out + a * f.diff(j)
        return out

    def divergence(self):
        out = MultiPoly.zero(self.dim)
        for j, a in enumerate(self.components):
            out = out + a.diff(j)
        return out

    def degree(self):
        return max(c.degree() for c in self.components)

    def weighted_terms(self, weights):
        """Yield ``(weighted_degree, j, exponent, coef)`` for every monomial."""
        for j, comp in enumerate(self.components):
            for exp, c in comp.terms.items():
                yield sum(a * w for a, w in zip(exp, weights)) - weights[j], j, exp, c

    def evaluate(self, point):
        return evaluate(self, point)

    def lambdify(self):
        fs = [c.lambdify() for c in self.components]

        def f(X):
            X = np.asarray(X, dtype=float)
            return np.stack([g(X) for g in fs], axis=-1)

        return f

    def compose(self, substitutions):
        return PolyVectorField([c.compose(substitutions) for c in self.components])

    def to_json(self):
        return {"dim": self.dim, "components": [c.to_json() for c in self.components]}

    @classmethod
    def from_json(cls, data):
        dim = int(data["dim"])
        comps = data["components"]
        if len(comps) != dim:
            raise DimensionMismatch(f"{len(comps)} components for dimension {dim}")
        return cls([MultiPoly.from_json(dim, c) for c in comps])


def lie_bracket(X, Y):
    """``[X, Y] = XY - YX`` as a derivation, exactly."""
    if X.dim != Y.dim:
        raise DimensionMismatch(f"cannot bracket fields of dimension {X.dim} and {Y.dim}")
    return PolyVectorField([X.apply(b) - Y.apply(a) for a, b in zip(X.components, Y.components)])


def dilate_pullback(X, w, eps, power=1):
    """Return ``eps**power * (delta_eps)^* X`` for the dilation with weights ``w``.

    A monomial ``x^a d/dx_j`` has weighted degree ``<a, w> - w_j`` and is
    multiplied by ``eps**(power + degree)``. Negative ``eps`` is allowed.
    """
    eps = as_fraction(eps)
    if eps == 0:
        raise ValueError("eps must be nonzero; use graded_parts for the eps -> 0 limit")
    if len(w) != X.dim:
        raise DimensionMismatch("weights and field dimension differ")
    comps = []
    for j, comp in enumerate(X.components):
        terms = {}
        for exp, c in comp.terms.items():
            k = sum(a * wi for a, wi in zip(exp, w)) - w[j] + power
            terms[exp] = c * eps**k
        comps.append(MultiPoly(X.dim, terms))
    return PolyVectorField(comps)


def dilate_function(f, w, eps, power=0):
    """Return ``eps**power * f(delta_eps x)`` for a polynomial function ``f``."""
    eps = as_fraction(eps)
    if eps == 0:
        raise ValueError("eps must be nonzero")
    terms = {}
    for exp, c in f.terms.items():
        k = sum(a * wi for a, wi in zip(exp, w)) + power
        terms[exp] = c * eps**k
    return MultiPoly(f.dim, terms)


def graded_parts(X, w, min_deg, max_deg):
    """Split ``X`` into parts homogeneous under the dilations with weights ``w``.

    Returns ``{k: X^(k)}`` for the nonzero parts with ``min_deg <= k <= max_deg``;
    parts outside the window are discarded.
    """
    if len(w) != X.dim:
        raise DimensionMismatch("weights and field dimension differ")
    if min_deg < -max(w):
        raise ValueError(f"min_deg must be >= {-max(w)}")
    buckets = {}
    for k, j, exp, c in X.weighted_terms(w):
        if min_deg <= k <= max_deg:
            buckets.setdefault(k, [dict() for _ in range(X.dim)])[j][exp] = c
    return {
        k: PolyVectorField([MultiPoly(X.dim, t) for t in comps])
        for k, comps in sorted(buckets.items())
    }


def evaluate(X, point):
    """Evaluate a vector field at one point (exact at rational points)."""
    if len(point) != X.dim:
        raise DimensionMismatch(f"point has length {len(point)}, expected {X.dim}")
    vals = [c.evaluate(point) for c in X.components]
    if all(isinstance(v, Fraction) for v in vals):
        return tuple(vals)
    return np.array([float(v) for v in vals])
