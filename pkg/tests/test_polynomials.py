from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given
from hypothesis import strategies as st

from srheat.polynomials import MultiPoly, PolyVectorField, dilate_pullback, graded_parts, lie_bracket

DIM = 3
SYMS = sympy.symbols("x1:4")


def to_sympy(p):
    return sum((sympy.Rational(c.numerator, c.denominator) * sympy.Mul(*[s ** k for s, k in zip(SYMS, e)])
                for e, c in p.terms.items()), sympy.Integer(0))


def field_to_sympy(X):
    return [to_sympy(c) for c in X.components]


def sympy_bracket(a, b):
    # [X, Y]^j = X(Y^j) - Y(X^j)
    return [sympy.expand(sum(a[i] * sympy.diff(b[j], SYMS[i]) - b[i] * sympy.diff(a[j], SYMS[i])
                             for i in range(DIM))) for j in range(DIM)]


coef = st.fractions(min_value=-3, max_value=3, max_denominator=4)
exps = st.tuples(*[st.integers(0, 2)] * DIM)
polys = st.dictionaries(exps, coef, max_size=3).map(lambda d: MultiPoly(DIM, d))
fields = st.lists(polys, min_size=DIM, max_size=DIM).map(PolyVectorField)


@given(fields, fields)
def test_bracket_matches_sympy(X, Y):
    got = field_to_sympy(lie_bracket(X, Y))
    want = sympy_bracket(field_to_sympy(X), field_to_sympy(Y))
    assert all(sympy.expand(g - w) == 0 for g, w in zip(got, want))


@given(fields, fields, fields)
def test_jacobi_identity(X, Y, Z):
    total = lie_bracket(X, lie_bracket(Y, Z)) + lie_bracket(Y, lie_bracket(Z, X)) + lie_bracket(Z, lie_bracket(X, Y))
    assert total.is_zero()


@given(fields, fields)
def test_bracket_antisymmetric(X, Y):
    assert (lie_bracket(X, Y) + lie_bracket(Y, X)).is_zero()


@given(fields)
def test_divergence_against_sympy(X):
    want = sympy.expand(sum(sympy.diff(c, s) for c, s in zip(field_to_sympy(X), SYMS)))
    assert sympy.expand(to_sympy(X.divergence()) - want) == 0


@given(polys, polys)
def test_product_matches_sympy(p, q):
    assert sympy.expand(to_sympy(p * q) - to_sympy(p) * to_sympy(q)) == 0


@given(polys, st.lists(st.floats(-2, 2), min_size=DIM, max_size=DIM))
def test_evaluate_matches_lambdify(p, x):
    assert p.evaluate([Fraction(v).limit_denominator(1000) for v in x]) == pytest.approx(
        float(to_sympy(p).subs(dict(zip(SYMS, [Fraction(v).limit_denominator(1000) for v in x])))), abs=1e-12)


@given(fields, st.sampled_from([Fraction(1, 2), Fraction(-1, 3), Fraction(2)]))
def test_homogeneous_parts_scale(X, eps):
    # the degree-k part of X satisfies eps * delta_eps^* X_k = eps^{k+1} X_k
    w = (1, 1, 2)
    for k, part in graded_parts(X, w, -2, 4).items():
        pulled = dilate_pullback(part, w, eps)
        assert (pulled - part * eps ** (k + 1)).is_zero()


@given(fields)
def test_graded_parts_reassemble(X):
    parts = graded_parts(X, (1, 2, 3), -3, 12)
    total = PolyVectorField.zero(DIM)
    for p in parts.values():
        total = total + p
    assert total == X


def test_lambdify_vectorised():
    x = MultiPoly.variable(DIM, 0)
    X = PolyVectorField([MultiPoly.constant(DIM, 1), x * x, x * MultiPoly.variable(DIM, 2)])
    pts = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 0.5]])
    np.testing.assert_allclose(X.lambdify()(pts), [[1, 1, 3], [1, 1, -0.5]])


def test_json_round_trip():
    x, y, z = MultiPoly.variables(DIM)
    X = PolyVectorField([x * Fraction(1, 3), y ** 2 - z, MultiPoly.zero(DIM)])
    assert PolyVectorField.from_json(X.to_json()) == X
