from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from srheat import StabilityError, load_corpus
from srheat.carnot import euclidean_kernel, grushin_kernel
from srheat.heat import (
    FDRun,
    GridSpec,
    HeatModel,
    clear_run_cache,
    dilation_transform,
    fd_kernel,
    fd_run_cached,
    kernel_change_measure,
    mc_kernel,
    rescale_model,
)
from srheat.heat.finite_difference import FDSolver
from srheat.polynomials import MultiPoly, PolyVectorField


def euclid():
    return load_corpus("euclidean1").heat_model()


def test_fd_euclidean_matches_exact_within_error_bar():
    m = euclid()
    tg = np.array([[0.0], [0.3], [1.0]])
    est = fd_kernel(m, 0.5, GridSpec(m.box_lo, m.box_hi, 0.01), [0.0], tg, dt=0.005)
    exact = euclidean_kernel(0.5, tg, np.zeros((3, 1)))
    assert np.all(np.abs(est.values - exact) <= 3 * est.error + 1e-12)
    assert np.max(np.abs(est.values / exact - 1)) < 1e-3


@pytest.mark.parametrize("t", [0.24, 0.5, 1.0])
def test_fd_grushin_matches_mehler(t):
    m = load_corpus("grushin_k1").heat_model()
    run = FDRun(m, GridSpec(m.box_lo, m.box_hi, 0.05), 1.0, [0.0, 0.0], dt=0.01, record=[0.24, 0.5])
    tg = np.array([[0.0, 0.0], [0.5, 0.2]])
    vals, err, extrap = run.sample(t, tg)
    exact = np.array([grushin_kernel(t, p, (0, 0)) for p in tg])
    assert np.all(np.abs(vals - exact) <= 3 * err)
    # Richardson extrapolation in h is closer than the raw value
    assert np.abs(extrap[0] - exact[0]) < np.abs(vals[0] - exact[0])


def test_fd_operator_self_adjoint_for_divergence_free_fields():
    m = load_corpus("heisenberg").heat_model()
    L = FDSolver(m, GridSpec(m.box_lo, m.box_hi, [0.5, 0.5, 0.5])).matrix
    assert abs(L - L.T).max() < 1e-12
    # negative semidefinite: the largest eigenvalue is <= 0
    lam = sp.linalg.eigsh(L, k=1, which="LA", return_eigenvectors=False)[0]
    assert lam <= 1e-10


def test_fd_forward_and_backward_agree_with_density():
    x = MultiPoly.variable(1, 0)
    dens = x * Fraction(1, 4) + 2  # positive on [-5, 5]
    m = HeatModel(euclid().fields, [-5.0], [5.0], density=dens)
    g = GridSpec(m.box_lo, m.box_hi, 0.02)
    fwd = fd_kernel(m, 0.3, g, [0.4], [[-0.2]], dt=0.003, estimate_error=False)
    bwd = fd_kernel(m, 0.3, g, [-0.2], [[0.4]], dt=0.003, mode="backward", estimate_error=False)
    # e(t, 0.4, -0.2) from both ends; symmetric w.r.t. mu
    assert fwd.values[0] == pytest.approx(bwd.values[0], rel=2e-3)


def test_fd_conserves_mass_far_from_boundary():
    m = euclid()
    solver = FDSolver(m, GridSpec(m.box_lo, m.box_hi, 0.02))
    v, _ = solver.evolve(solver.dirac([0.0]), 0.2, 0.002)
    assert v.sum() * 0.02 == pytest.approx(1.0, abs=1e-9)


def test_explicit_scheme_reports_stable_step():
    m = euclid()
    solver = FDSolver(m, GridSpec(m.box_lo, m.box_hi, 0.01))
    with pytest.raises(StabilityError):
        solver.evolve(solver.dirac([0.0]), 0.1, 0.01, scheme="euler")


def test_run_cache_reuses_runs():
    clear_run_cache()
    m = euclid()
    g = GridSpec(m.box_lo, m.box_hi, 0.02)
    a = fd_run_cached(m, g, 0.5, [0.0], 0.005, record=[0.1, 0.2])
    assert fd_run_cached(m, g, 0.5, [0.0], 0.005, record=[0.2]) is a
    b = fd_run_cached(m, g, 0.5, [0.0], 0.005, record=[0.3])
    assert b is not a and {0.1, 0.2, 0.3} <= set(b.record)
    clear_run_cache()


def test_mc_euclidean_matches_exact():
    m = euclid()
    tg = np.array([[0.0], [0.5]])
    est = mc_kernel(m, 0.5, [0.0], tg, n_paths=200_000, seed=11)
    exact = euclidean_kernel(0.5, tg, np.zeros((2, 1)))
    assert np.all(np.abs(est.values - exact) <= 4 * est.error)


def test_mc_results_do_not_depend_on_thread_count(monkeypatch):
    m = load_corpus("grushin_k1").heat_model()
    runs = []
    for n in ("1", "3"):
        monkeypatch.setenv("SRHEAT_THREADS", n)
        runs.append(mc_kernel(m, 0.25, [0.0, 0.0], [[0.0, 0.0]], n_paths=20_000, seed=5))
    assert runs[0].values.tobytes() == runs[1].values.tobytes()
    assert runs[0].error.tobytes() == runs[1].error.tobytes()


def test_mc_seed_changes_stream():
    m = euclid()
    a = mc_kernel(m, 0.25, [0.0], [[0.0]], n_paths=5000, seed=1)
    b = mc_kernel(m, 0.25, [0.0], [[0.0]], n_paths=5000, seed=2)
    assert a.values[0] != b.values[0]


@pytest.mark.parametrize("bad", [dict(n_paths=10), dict(n_batches=5), dict(dt=0.1)])
def test_mc_argument_validation(bad):
    with pytest.raises(ValueError):
        mc_kernel(euclid(), 1.0, [0.0], [[0.0]], **bad)


def test_flat_model_rescales_to_itself():
    m = load_corpus("heisenberg").heat_model()
    r = rescale_model(m, (1, 1, 2), Fraction(1, 4), box=m.box)
    assert r.fields == m.fields


def test_dilation_transform_matches_rescaled_model():
    # grushin_k1 is flat, so e(tau, x, x') = |eps|^Q e(eps^2 tau, delta x, delta x') exactly
    m = load_corpus("grushin_k1").heat_model()
    eps = 0.5
    big = fd_kernel(m, eps ** 2, GridSpec(m.box_lo, m.box_hi, 0.05), [0.0, 0.0], [[0.25, 0.125]], dt=eps ** 2 / 50)
    tr = dilation_transform(big, (1, 2), eps)
    assert tr.t == pytest.approx(1.0)
    np.testing.assert_allclose(tr.targets, [[0.5, 0.5]])
    assert tr.values[0] == pytest.approx(grushin_kernel(1.0, (0.5, 0.5), (0, 0)), rel=2e-2)


def test_change_of_measure_divides_by_density():
    m = euclid()
    est = fd_kernel(m, 0.2, GridSpec(m.box_lo, m.box_hi, 0.02), [0.0], [[0.1], [0.2]], dt=0.002,
                    estimate_error=False)
    x = MultiPoly.variable(1, 0)
    out = kernel_change_measure(est, x + 3)
    np.testing.assert_allclose(out.values, est.values / np.array([3.1, 3.2]))


def test_model_rejects_mixed_dimensions():
    with pytest.raises(ValueError):
        HeatModel((PolyVectorField.coordinate(1, 0), PolyVectorField.coordinate(2, 0)), [-1.0], [1.0])
