from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from srheat import load_corpus
from srheat.corpus import corpus_names
from srheat.errors import NonpositiveDensity
from srheat.nilpotent import (
    CutoffSpec,
    bracket_closure,
    check_divergence_free,
    damping_rate_fit,
    hormander_coercivity,
    nilpotentize_measure,
)
from srheat.polynomials import MultiPoly, PolyVectorField


def vf(dim, *comps):
    return PolyVectorField([c if isinstance(c, MultiPoly) else MultiPoly.constant(dim, c) for c in comps])


def hand_hats():
    x1, x2, x3 = MultiPoly.variables(3)
    g1, _ = MultiPoly.variables(2)
    half = Fraction(1, 2)
    heis = [vf(3, 1, 0, x2 * -half), vf(3, 0, 1, x1 * half)]
    return {
        "euclidean1": [vf(1, 1)],
        "euclidean2": [vf(2, 1, 0), vf(2, 0, 1)],
        "grushin_k1": [vf(2, 1, 0), vf(2, 0, g1)],
        "grushin_k2": [vf(2, 1, 0), vf(2, 0, g1 * g1)],
        "grushin_pert": [vf(2, 1, 0), vf(2, 0, g1)],
        "grushin_pert2": [vf(2, 1, 0), vf(2, 0, g1)],
        "grushin_quadratic": [vf(2, 1, 0), vf(2, 0, g1 * g1)],
        "heisenberg": heis,
        "heisenberg_pert": heis,
        "martinet": [vf(3, 1, 0, 0), vf(3, 0, 1, x1 * x1 * half)],
    }


@pytest.mark.parametrize("name", corpus_names())
def test_hat_fields_match_hand_derivation(name):
    S = load_corpus(name).nilpotent()
    assert list(S.hat_fields) == hand_hats()[name]
    assert check_divergence_free(S)[0]


def test_measure_constant():
    x = MultiPoly.variable(2, 0)
    assert nilpotentize_measure(x + 2, (0, 0)) == 2
    with pytest.raises(NonpositiveDensity):
        nilpotentize_measure(x - 1, (0, 0))


@pytest.mark.parametrize("name,gamma", [("grushin_pert", 0.1), ("grushin_pert", 0.2), ("heisenberg_pert", 0.1)])
def test_damping_rate_is_one_minus_two_gamma(name, gamma):
    # the only non-hat term has degree 0 and quadratic growth: eps * (eps^-gamma)^2
    spec = load_corpus(name)
    S = spec.nilpotent()
    eps = [10.0 ** (-k / 2) for k in range(9)]
    slopes = []
    for X in S.pushed_fields:
        slope, rms, sups = damping_rate_fit(X, S, gamma, eps)
        if np.any(sups > 0):
            slopes.append(slope)
            assert rms < 1e-6
    assert min(slopes) == pytest.approx(1 - 2 * gamma, abs=1e-6)


def test_undamped_field_has_no_rate_on_growing_sets():
    spec = load_corpus("grushin_pert")
    S = spec.nilpotent()
    grid = np.array([[x, 0.0] for x in np.linspace(-1, 1, 21)])
    slope, _, _ = damping_rate_fit(S.pushed_fields[1], S, 0.1, [1, 0.1, 0.01], sample_grid=grid, damped=False)
    assert slope == pytest.approx(1.0, abs=1e-9)  # on a fixed compact set the rate is just eps


def test_grushin_coercivity_constant_is_one():
    S = load_corpus("grushin_k1").nilpotent()
    frame = bracket_closure(S.hat_fields, S.r)
    assert len(frame) == 3
    c, arg, lam, grid = hormander_coercivity(frame, S.r, weights=S.weights, radius=10.0, n_points=10_000)
    assert c == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(arg, 0.0, atol=1e-12)


def test_coercivity_fails_without_brackets():
    S = load_corpus("heisenberg").nilpotent()
    c, *_ = hormander_coercivity(list(S.hat_fields), S.r, weights=S.weights, n_points=2000)
    assert c < 1e-12  # two vectors in R^3: P P^T is singular everywhere


@given(st.floats(0.0, 5.0), st.sampled_from(["smooth", "bump"]))
def test_cutoff_values(s, profile):
    cut = CutoffSpec(1.0, 2.0, profile)
    v = float(cut(np.array([[s, 0.0]]), (1, 2))[0])
    assert 0.0 <= v <= 1.0
    if s <= 1.0:
        assert v == 1.0
    if s >= 2.0:
        assert v == 0.0


def test_cutoff_monotone():
    cut = CutoffSpec()
    s = np.linspace(0, 3, 301)
    v = cut(np.stack([s, np.zeros_like(s)], -1), (1, 2))
    assert np.all(np.diff(v) <= 1e-15)
