from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srheat import compute_flag, load_corpus, nilpotentize, privileged_chart, verify_orders
from srheat.charts import build_exponential_chart, dilate, identity_chart, push_field
from srheat.corpus import corpus_names
from srheat.polynomials import MultiPoly, PolyVectorField, dilate_pullback


def skewed():
    # X1 = d1 + d3 makes x3 of order 1 although its weight is 2: the identity is not privileged
    x1 = MultiPoly.variable(3, 0)
    one, zero = MultiPoly.constant(3, 1), MultiPoly.zero(3)
    return [PolyVectorField([one, zero, one]), PolyVectorField([zero, one, x1])]


@pytest.mark.parametrize("name", corpus_names())
def test_corpus_charts_are_privileged_translations(name):
    spec = load_corpus(name)
    chart = spec.chart()
    assert chart.is_translation
    assert verify_orders(chart, spec.fields)[1]


def test_identity_rejected_when_not_privileged():
    fields = skewed()
    flag = compute_flag(fields, (0, 0, 0))
    orders, ok = verify_orders(identity_chart(flag.weights), fields)
    assert not ok and orders[2] == 1
    chart = privileged_chart(fields, flag)
    assert not chart.is_translation
    assert verify_orders(chart, fields) == ((1, 1, 2), True)


@pytest.mark.parametrize("point", [(0, 0, 0), (Fraction(1, 2), -1, 2)])
def test_exponential_chart_round_trip(point):
    fields = skewed()
    flag = compute_flag(fields, point)
    chart = build_exponential_chart(fields, flag, point=point)
    q = np.array([float(c) for c in point])
    rng = np.random.default_rng(3)
    for scale in (1e-1, 1e-2):
        x = scale * rng.standard_normal((5, 3))
        y = np.array([[p.evaluate(list(row)) for p in chart.forward_map] for row in x])
        back = np.array([[p.evaluate(list(row)) for p in chart.inverse_map] for row in y - q])
        # exact up to weighted order trunc_order; the remainder is tiny at this scale
        assert np.max(np.abs(back - x)) <= 10 * scale ** 3


def test_martinet_exponential_chart_off_origin():
    spec = load_corpus("martinet")
    flag = spec.flag((0, 1, 0))
    chart = build_exponential_chart(spec.fields, flag, point=flag.point)
    assert verify_orders(chart, spec.fields)[1]
    S = nilpotentize(spec.fields, chart=chart)
    assert compute_flag(S.hat_fields, (0, 0, 0)).growth_vector == (2, 2, 3)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.floats(0.1, 10) | st.floats(-10, -0.1), st.floats(0.1, 10))
def test_dilation_group_law(x, a, b):
    w = (1, 1, 2)
    np.testing.assert_allclose(dilate(dilate(x, w, a), w, b), dilate(x, w, a * b), rtol=1e-10, atol=1e-10)


@given(st.sampled_from(["heisenberg_pert", "grushin_pert", "grushin_quadratic", "martinet"]),
       st.sampled_from([Fraction(1, 2), Fraction(-1, 3), Fraction(5, 2)]))
def test_hat_fields_homogeneous_of_degree_minus_one(name, eps):
    spec = load_corpus(name)
    S = spec.nilpotent()
    for X in S.hat_fields:
        assert dilate_pullback(X, S.weights, eps) == X  # eps * delta_eps^* X


def test_push_through_identity_is_noop():
    spec = load_corpus("heisenberg_pert")
    chart = identity_chart(spec.flag().weights)
    for X in spec.fields:
        assert push_field(chart, X) == X
