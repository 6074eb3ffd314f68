import itertools
from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given
from hypothesis import strategies as st

from srheat import HormanderViolation, compute_flag, load_corpus, sr_pseudo_norm
from srheat.corpus import corpus_names
from srheat.flag import growth_vector, is_regular
from srheat.polynomials import MultiPoly, PolyVectorField, lie_bracket

# hand-derived at the base point (origin)
EXPECTED = {
    "euclidean1": ((1,), (1,), 1),
    "euclidean2": ((2,), (1, 1), 2),
    "grushin_k1": ((1, 2), (1, 2), 3),
    "grushin_k2": ((1, 1, 2), (1, 3), 4),
    "grushin_pert": ((1, 2), (1, 2), 3),
    "grushin_pert2": ((1, 2), (1, 2), 3),
    "grushin_quadratic": ((1, 1, 2), (1, 3), 4),
    "heisenberg": ((2, 3), (1, 1, 2), 4),
    "heisenberg_pert": ((2, 3), (1, 1, 2), 4),
    "martinet": ((2, 2, 3), (1, 1, 3), 5),
}


def test_expected_table_covers_corpus():
    assert set(EXPECTED) == set(corpus_names())


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_corpus_flags(name):
    gv, w, Q = EXPECTED[name]
    f = load_corpus(name).flag()
    assert f.growth_vector == gv
    assert tuple(f.weights) == w
    assert f.Q == Q
    assert f.r == max(w)


def brute_growth(fields, point, depth):
    """All brackets of all words, evaluated and rank-counted with sympy."""
    dim = fields[0].dim
    level = list(fields)
    allv = [X.evaluate(point) for X in level]
    ranks = [sympy.Matrix(allv).rank()]
    for _ in range(depth - 1):
        if ranks[-1] == dim:
            break
        level = [lie_bracket(X, Y) for X in fields for Y in level]
        allv += [Y.evaluate(point) for Y in level]
        ranks.append(sympy.Matrix(allv).rank())
    return tuple(ranks)


@pytest.mark.parametrize("name", sorted(EXPECTED))
@pytest.mark.parametrize("point", [(0, 0, 0), (1, -1, 2), (Fraction(1, 3), 2, -1)])
def test_growth_vector_matches_brute_force(name, point):
    spec = load_corpus(name)
    p = tuple(Fraction(c) for c in point[:spec.dim])
    want = brute_growth(spec.fields, p, 6)
    assert growth_vector(spec.fields, p) == want


def test_non_hormander_raises():
    x1 = MultiPoly.variable(2, 0)
    fields = [PolyVectorField.coordinate(2, 0), PolyVectorField([MultiPoly.zero(2), x1 * 0])]
    with pytest.raises(HormanderViolation) as exc:
        compute_flag(fields, (0, 0), max_depth=4)
    assert exc.value.dim == 2


def test_regularity():
    ok, _ = is_regular(load_corpus("heisenberg").fields, (0, 0, 0))
    assert ok
    ok, witness = is_regular(load_corpus("grushin_k1").fields, (0, 0))
    assert not ok and witness is not None


@st.composite
def growth_vectors(draw):
    n = draw(st.integers(1, 6))
    gv = [draw(st.integers(1, n))]
    while gv[-1] < n:
        gv.append(draw(st.integers(gv[-1], n)))
    return gv


@given(growth_vectors())
def test_two_hausdorff_formulas_agree(gv):
    # weights w_j = i for n_{i-1} < j <= n_i; Q = sum w_j = sum i (n_i - n_{i-1})
    w = [i + 1 for i in range(len(gv)) for _ in range(gv[i] - (gv[i - 1] if i else 0))]
    assert sum(w) == sum((i + 1) * (gv[i] - (gv[i - 1] if i else 0)) for i in range(len(gv)))
    assert len(w) == gv[-1]


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.01, 10))
def test_pseudo_norm_homogeneous(x, lam):
    w = (1, 1, 2)
    x = np.array(x)
    scaled = x * lam ** np.array(w, float)
    assert sr_pseudo_norm(scaled, w) == pytest.approx(lam * sr_pseudo_norm(x, w), rel=1e-9, abs=1e-12)


def test_flag_every_point_of_heisenberg_is_regular():
    spec = load_corpus("heisenberg")
    for p in itertools.product([-1, 0, 2], repeat=3):
        assert compute_flag(spec.fields, p).growth_vector == (2, 3)
