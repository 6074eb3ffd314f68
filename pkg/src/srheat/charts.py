"""Privileged coordinates built from the exponential map of an adapted frame.

Charts are polynomial jets. ``forward_map`` sends chart coordinates ``x`` to
the manifold (``x -> exp(sum x_i Z_i)(q)``) and ``inverse_map`` is its
compositional inverse expanded around ``q``. Internally both are kept to
ordinary degree ``trunc_order + 1``, which is what makes pushforwards exact up
to weighted degree ``trunc_order``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import ChartValidityError, DimensionMismatch, FrameNotAdapted, Inconclusive, TruncationLoss
from .flag import _RowReducer, exact_point, rational_rank, sr_pseudo_norm
from .polynomials import MultiPoly, PolyVectorField, Weights

__all__ = [
    "PrivilegedChart",
    "build_exponential_chart",
    "verify_orders",
    "make_privileged",
    "dilate",
    "push_field",
    "shift_field",
    "identity_chart",
    "privileged_chart",
]


# --- truncated polynomial arithmetic ---------------------------------------

def _wdeg(exp, w):
    return sum(a * b for a, b in zip(exp, w))


def _mul_trunc(a, b, w, limit):
    """Product of two MultiPolys keeping monomials with ``<exp, w> <= limit``."""
    terms = {}
    bt = [(e, c, _wdeg(e, w)) for e, c in b.terms.items()]
    for e1, c1 in a.terms.items():
        d1 = _wdeg(e1, w)
        if d1 > limit:
            continue
        for e2, c2, d2 in bt:
            if d1 + d2 <= limit:
                e = tuple(x + y for x, y in zip(e1, e2))
                terms[e] = terms.get(e, 0) + c1 * c2
    return MultiPoly(a.dim, terms)


def _trunc(p, w, limit):
    return MultiPoly(p.dim, {e: c for e, c in p.terms.items() if _wdeg(e, w) <= limit})


def _compose_trunc(p, subs, w, limit):
    """``p(subs)`` where ``subs`` have no constant term, truncated by weight ``w``."""
    dim = subs[0].dim
    cache = [{0: MultiPoly.constant(dim, 1), 1: _trunc(s, w, limit)} for s in subs]

    def power(j, k):
        c = cache[j]
        if k not in c:
            h = k // 2
            c[k] = _mul_trunc(power(j, h), power(j, k - h), w, limit)
        return c[k]

    out = {}
    for exp, coef in p.terms.items():
        if sum(exp) > limit * 1:  # every factor has weighted degree >= 1
            continue
        term = MultiPoly.constant(dim, coef)
        for j, e in enumerate(exp):
            if e:
                term = _mul_trunc(term, power(j, e), w, limit)
                if term.is_zero():
                    break
        for e, c in term.terms.items():
            out[e] = out.get(e, 0) + c
    return MultiPoly(dim, out)


def shift_field(X, q):
    """Express ``X`` in the variable ``u = y - q``."""
    dim = X.dim
    subs = [MultiPoly.variable(dim, j) + q[j] for j in range(dim)]
    return X.compose(subs)


def _shift_poly(p, q):
    dim = p.dim
    return p.compose([MultiPoly.variable(dim, j) + q[j] for j in range(dim)])


def _const(p):
    return p.terms.get((0,) * p.dim, Fraction(0))


# --- the chart object ----------------------------------------------------------

@dataclass(frozen=True)
class PrivilegedChart:
    base_point: tuple
    weights: Weights
    frame: tuple
    forward_map: tuple  # x -> y, weighted degree <= trunc_order
    inverse_map: tuple  # u = y - q -> x, ordinary degree <= trunc_order + 1
    trunc_order: int
    forward_full: tuple = field(default=(), repr=False, compare=False)
    adjusted: bool = False
    trust_radius: float = 1.0

    @property
    def dim(self):
        return len(self.weights)

    @property
    def is_translation(self):
        """True when the chart is ``x -> q + x`` exactly (then it is valid everywhere)."""
        n = self.dim
        xs = MultiPoly.variables(n)
        return all(f == x + qj for f, x, qj in zip(self.forward_full or self.forward_map, xs, self.base_point)) \
            and all(g == x for g, x in zip(self.inverse_map, xs))

    @property
    def field_degree_limit(self):
        return self.trunc_order - max(self.weights)

    def to_manifold(self, x):
        """Numerically apply the forward jet to chart points ``x`` (..., n)."""
        x = np.asarray(x, dtype=float)
        self.check_validity(x)
        return np.stack([p.lambdify()(x) for p in self.forward_map], axis=-1)

    def to_chart(self, y):
        y = np.asarray(y, dtype=float)
        u = y - np.array([float(c) for c in self.base_point])
        return np.stack([p.lambdify()(u) for p in self.inverse_map], axis=-1)

    def check_validity(self, x, radius=None):
        radius = self.trust_radius if radius is None else radius
        if np.any(sr_pseudo_norm(np.atleast_2d(x), self.weights) > radius * (1 + 1e-12)):
            raise ChartValidityError(
                f"chart points leave the trust ball of sR radius {radius}"
            )

    def jacobian_det_at_base(self):
        n = self.dim
        A = [[self.forward_map[i].diff(j).evaluate((0,) * n) for j in range(n)] for i in range(n)]
        return _det(A)

    def to_json(self):
        return {
            "base_point": [str(c) for c in self.base_point],
            "weights": list(self.weights),
            "trunc_order": self.trunc_order,
            "adjusted": self.adjusted,
            "frame": [Z.to_json() for Z in self.frame],
            "forward_map": [p.to_json() for p in self.forward_map],
            "inverse_map": [p.to_json() for p in self.inverse_map],
        }


def _det(A):
    n = len(A)
    M = [list(map(Fraction, row)) for row in A]
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            M[c], M[piv] = M[piv], M[c]
            det = -det
        det *= M[c][c]
        for r in range(c + 1, n):
            f = M[r][c] / M[c][c]
            M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return det


def _inverse_matrix(A):
    n = len(A)
    M = [list(map(Fraction, row)) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(A)]
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c] != 0), None)
        if piv is None:
            raise FrameNotAdapted("frame is singular at the base point")
        M[c], M[piv] = M[piv], M[c]
        p = M[c][c]
        M[c] = [a / p for a in M[c]]
        for r in range(n):
            if r != c and M[r][c] != 0:
                f = M[r][c]
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return [row[n:] for row in M]


def _linear(A, polys):
    n = len(A)
    return [sum((polys[k] * A[i][k] for k in range(n) if A[i][k] != 0), MultiPoly.zero(polys[0].dim))
            for i in range(n)]


def _invert_series(lin, nonlin, degree):
    """Invert ``v = lin @ u + nonlin(u)`` as a series ``u(v)`` to ordinary degree ``degree``.

    ``nonlin`` is a list of polynomials in ``u`` with no constant or linear part.
    """
    n = len(lin)
    Ainv = _inverse_matrix(lin)
    ones = (1,) * n
    v = MultiPoly.variables(n)
    G = _linear(Ainv, list(v))
    for _ in range(degree):
        NG = [_compose_trunc(p, G, ones, degree) for p in nonlin]
        G = _linear(Ainv, [vi - ni for vi, ni in zip(v, NG)])
    return tuple(_trunc(g, ones, degree) for g in G)


def _frame_matrix(frame, q):
    n = len(q)
    return [[frame[i].components[j].evaluate(q) for i in range(n)] for j in range(n)]


def _check_adapted(frame, weights, flag, q):
    n = len(q)
    cols = [[c.evaluate(q) for c in Z.components] for Z in frame]
    if rational_rank(cols, n) < n:
        raise FrameNotAdapted("frame does not span at the base point")
    if flag is None:
        return
    ref = [[c.evaluate(q) for c in Z.components] for Z, _ in flag.bracket_frame]
    for k in range(1, max(weights) + 1):
        mine = [v for v, wi in zip(cols, weights) if wi <= k]
        theirs = [v for v, wi in zip(ref, flag.weights) if wi <= k]
        nk = len(theirs)
        if rational_rank(mine, n) != nk or rational_rank(mine + theirs, n) != nk:
            raise FrameNotAdapted(f"frame elements of weight <= {k} do not span D^{k}")


def identity_chart(weights, trunc_order=None, base_point=None):
    """Chart for coordinates that are already privileged at ``base_point``."""
    w = Weights(weights)
    n = len(w)
    q = exact_point(base_point or (0,) * n, n)
    T = trunc_order if trunc_order is not None else 2 * max(w) + 2
    xs = MultiPoly.variables(n)
    fwd = tuple(xs[j] + q[j] for j in range(n))
    frame = tuple(PolyVectorField.coordinate(n, j) for j in range(n))
    return PrivilegedChart(q, w, frame, fwd, tuple(xs), T, forward_full=fwd, trust_radius=float("inf"))


def build_exponential_chart(fields, flag, point=None, trunc_order=None, frame=None, weights=None,
                            auto_adjust=True):
    """Exponential chart ``x -> exp(sum x_i Z_i)(q)`` for an adapted frame ``Z``.

    ``frame`` defaults to ``flag.bracket_frame``. When ``auto_adjust`` is on
    and the raw chart fails :func:`verify_orders`, a triangular polynomial
    correction is applied (see :func:`make_privileged`).
    """
    fields = list(fields)
    n = fields[0].dim
    q = exact_point(point if point is not None else flag.point, n)
    if frame is None:
        Z = tuple(f for f, _ in flag.bracket_frame)
        w = flag.weights
    else:
        Z = tuple(frame)
        w = Weights(weights if weights is not None else flag.weights)
    if len(Z) != n:
        raise FrameNotAdapted(f"frame has {len(Z)} elements, need {n}")
    _check_adapted(Z, w, flag, q)
    r = max(w)
    T = 2 * r + 2 if trunc_order is None else int(trunc_order)
    if T < r:
        raise ValueError(f"trunc_order must be >= r = {r}")
    D = T + 1

    # formal series of the time-one flow in variables (x_1..x_n, u_1..u_n)
    N2 = 2 * n
    Zs = [shift_field(Zi, q) for Zi in Z]
    comps = []  # V = sum_i x_i Z_i(q + u), as coefficients of d/du_l
    for l in range(n):
        c = MultiPoly.zero(N2)
        for i in range(n):
            zi = Zs[i].components[l]
            if zi:
                c = c + zi.embed(N2, offset=n) * MultiPoly.variable(N2, i)
        comps.append(c)

    def apply_V(g, budget):
        out = MultiPoly.zero(N2)
        for l in range(n):
            if comps[l]:
                out = out + comps[l] * g.diff(n + l)
        # drop terms whose u-degree cannot be consumed by the remaining steps
        return MultiPoly(N2, {e: c for e, c in out.terms.items() if sum(e[n:]) <= budget})

    fwd_full = []
    for j in range(n):
        g = MultiPoly.variable(N2, n + j)
        total = {}
        for k in range(1, D + 1):
            g = apply_V(g, D - k)
            if g.is_zero():
                break
            fact = math.factorial(k)
            for e, c in g.terms.items():
                if not any(e[n:]):
                    total[e[:n]] = total.get(e[:n], 0) + c / fact
        fwd_full.append(MultiPoly(n, total))

    lin = [[fwd_full[i].terms.get(tuple(int(a == j) for a in range(n)), Fraction(0)) for j in range(n)]
           for i in range(n)]
    nonlin = [MultiPoly(n, {e: c for e, c in p.terms.items() if sum(e) >= 2}) for p in fwd_full]
    inv = _invert_series(lin, nonlin, D)

    fwd_full = tuple(p + qj for p, qj in zip(fwd_full, q))
    fwd = tuple(_trunc(p, w, T) for p in fwd_full)
    chart = PrivilegedChart(q, w, Z, fwd, inv, T, forward_full=fwd_full)
    if auto_adjust:
        orders, ok = verify_orders(chart, fields)
        if not ok:
            chart = make_privileged(chart, fields)
    if chart.is_translation:
        chart = replace(chart, trust_radius=float("inf"))
    return chart


def _word_values(fields_u, poly, max_len, stop_at_first=True):
    """Smallest word length ``k <= max_len`` with a nonzero ``X_w poly (0)``."""
    if _const(poly) != 0:
        return 0
    level = [poly]
    for k in range(1, max_len + 1):
        budget = max_len - k
        nxt = []
        for X in fields_u:
            for g in level:
                h = X.apply(g)
                h = MultiPoly(h.dim, {e: c for e, c in h.terms.items() if sum(e) <= budget})
                if h.is_zero():
                    continue
                if _const(h) != 0:
                    return k
                nxt.append(h)
        level = list(dict.fromkeys(nxt))
        if not level:
            return None
    return None


def verify_orders(chart, fields):
    """Nonholonomic order of every chart coordinate at the base point.

    Returns ``(orders, ok)`` where ``ok`` says whether ``orders == weights``.
    Raises :class:`Inconclusive` if some coordinate has no nonvanishing
    derivative along words of length ``<= trunc_order``.
    """
    q = chart.base_point
    fields_u = [shift_field(X, q) for X in fields]
    orders = []
    for j, g in enumerate(chart.inverse_map):
        k = _word_values(fields_u, g, chart.trunc_order)
        if k is None:
            raise Inconclusive(f"all words of length <= {chart.trunc_order} annihilate x_{j + 1}")
        orders.append(k)
    return tuple(orders), tuple(orders) == tuple(chart.weights)


def _word_jets(fields_u, poly, max_len):
    """Values ``X_w poly (0)`` for every word of length ``1..max_len`` (lexicographic)."""
    vals = []
    level = [poly]
    for k in range(1, max_len + 1):
        budget = max_len - k
        nxt = []
        for X in fields_u:
            for g in level:
                h = X.apply(g)
                h = MultiPoly(h.dim, {e: c for e, c in h.terms.items() if sum(e) <= budget})
                vals.append(_const(h))
                nxt.append(h)
        level = nxt
    return vals


def make_privileged(chart, fields):
    """Triangular correction ``x_j <- x_j - P_j(x_{w < w_j})`` giving privileged coordinates.

    ``P_j`` is the unique polynomial in lower-weight coordinates, of weighted
    degree below ``w_j``, for which every word of length ``< w_j`` kills the
    corrected coordinate at the base point.
    """
    n = chart.dim
    w = chart.weights
    q = chart.base_point
    fields_u = [shift_field(X, q) for X in fields]
    D = chart.trunc_order + 1
    ones = (1,) * n
    G = list(chart.inverse_map)
    for j in range(n):
        wj = w[j]
        if wj == 1:
            continue
        lower = [i for i in range(n) if w[i] < wj]
        monos = []
        for exp in itertools.product(*[range(wj) for _ in lower]):
            deg = sum(e * w[i] for e, i in zip(exp, lower))
            if 1 <= deg < wj:
                full = [0] * n
                for e, i in zip(exp, lower):
                    full[i] = e
                monos.append(tuple(full))
        if not monos:
            continue
        cols = []
        for m in monos:
            p = MultiPoly.constant(n, 1)
            for i, e in enumerate(m):
                for _ in range(e):
                    p = _mul_trunc(p, G[i], ones, D)
            cols.append((m, p, _word_jets(fields_u, p, wj - 1)))
        rhs = _word_jets(fields_u, G[j], wj - 1)
        coef = _solve_exact([c[2] for c in cols], rhs)
        corr = MultiPoly.zero(n)
        for (m, p, _), c in zip(cols, coef):
            if c:
                corr = corr + p * c
        G[j] = _trunc(G[j] - corr, ones, D)

    lin = [[G[i].terms.get(tuple(int(a == k) for a in range(n)), Fraction(0)) for k in range(n)]
           for i in range(n)]
    nonlin = [MultiPoly(n, {e: c for e, c in p.terms.items() if sum(e) >= 2}) for p in G]
    u_of_x = _invert_series(lin, nonlin, D)
    fwd_full = tuple(p + qj for p, qj in zip(u_of_x, q))
    fwd = tuple(_trunc(p, w, chart.trunc_order) for p in fwd_full)
    new = PrivilegedChart(q, w, chart.frame, fwd, tuple(G), chart.trunc_order,
                          forward_full=fwd_full, adjusted=True, trust_radius=chart.trust_radius)
    orders, ok = verify_orders(new, fields)
    if not ok:
        raise FrameNotAdapted(f"triangular correction failed, orders {orders} vs weights {tuple(w)}")
    return new


def _solve_exact(columns, rhs):
    """Solve ``sum_k c_k columns[k] = rhs`` exactly; columns may be overdetermined."""
    m = len(rhs)
    k = len(columns)
    rows = [[columns[c][i] for c in range(k)] + [rhs[i]] for i in range(m)]
    piv_cols = []
    r = 0
    for c in range(k):
        piv = next((i for i in range(r, m) if rows[i][c] != 0), None)
        if piv is None:
            continue
        rows[r], rows[piv] = rows[piv], rows[r]
        p = rows[r][c]
        rows[r] = [a / p for a in rows[r]]
        for i in range(m):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[r])]
        piv_cols.append(c)
        r += 1
    if any(rows[i][k] != 0 for i in range(r, m)):
        raise FrameNotAdapted("no triangular correction makes these coordinates privileged")
    sol = [Fraction(0)] * k
    for i, c in enumerate(piv_cols):
        sol[c] = rows[i][k]
    return sol


def dilate(x, w, eps):
    """``delta_eps(x) = (eps^w_i x_i)``; vectorised over the last axis, eps may be negative."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=int)
    if x.shape[-1] != w.shape[0]:
        raise DimensionMismatch("point and weights have different lengths")
    return x * np.power(float(eps), w)


def push_field(chart, X, max_degree=None):
    """Express ``X`` in chart coordinates, keeping weighted degrees ``<= max_degree``.

    The jet is exact up to ``trunc_order - max(w)``; asking for more emits
    :class:`TruncationLoss` and caps the degree.
    """
    n = chart.dim
    if X.dim != n:
        raise DimensionMismatch("field and chart dimensions differ")
    limit = chart.field_degree_limit
    if max_degree is None:
        max_degree = limit
    elif max_degree > limit:
        warnings.warn(
            f"requested degree {max_degree} exceeds the exact jet ({limit}); truncating",
            TruncationLoss,
            stacklevel=2,
        )
        max_degree = limit
    w = chart.weights
    T = chart.trunc_order
    ones = (1,) * n
    Xu = shift_field(X, chart.base_point)
    usub = [p - qj for p, qj in zip(chart.forward_full, chart.base_point)]
    usub = [_trunc(p, w, T) for p in usub]
    comps = []
    for j in range(n):
        g = Xu.apply(chart.inverse_map[j])
        g = _trunc(g, ones, T)
        c = _compose_trunc(g, usub, w, max_degree + w[j])
        comps.append(c)
    return PolyVectorField(comps)


def push_function(chart, f, max_degree=None):
    """``f o forward_map`` truncated at weighted degree ``max_degree`` (default trunc_order)."""
    T = chart.trunc_order if max_degree is None else max_degree
    fu = _shift_poly(f, chart.base_point)
    usub = [p - qj for p, qj in zip(chart.forward_full, chart.base_point)]
    const = _const(fu)
    rest = fu - const
    return _compose_trunc(rest, usub, chart.weights, T) + const if not rest.is_zero() else MultiPoly.constant(chart.dim, const)


def jacobian_det_poly(chart, max_degree=None):
    """``det D(forward_map)`` as a polynomial truncated at weighted degree ``max_degree``."""
    n = chart.dim
    T = chart.trunc_order if max_degree is None else max_degree
    J = [[chart.forward_full[i].diff(j) for j in range(n)] for i in range(n)]
    total = MultiPoly.zero(n)
    for perm in itertools.permutations(range(n)):
        sign = _perm_sign(perm)
        term = MultiPoly.constant(n, sign)
        for i, j in enumerate(perm):
            term = _mul_trunc(term, J[i][j], chart.weights, T)
            if term.is_zero():
                break
        total = total + term
    return total


def _perm_sign(perm):
    sign = 1
    p = list(perm)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def privileged_chart(fields, flag, point=None, trunc_order=None):
    """Translated coordinates ``x -> q + x`` when they are already privileged, else the exponential chart.

    The translation is exact (no jet truncation, valid everywhere), so it is
    preferred whenever :func:`verify_orders` accepts it.
    """
    q = point if point is not None else flag.point
    tr = identity_chart(flag.weights, trunc_order, q)
    try:
        _, ok = verify_orders(tr, fields)
    except Inconclusive:
        ok = False
    if ok:
        return tr
    return build_exponential_chart(fields, flag, point=q, trunc_order=trunc_order)
