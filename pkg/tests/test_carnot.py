"""The closed-form kernels are the oracles for the solvers, so they get their own oracles:
the heat equation by finite differences, dilation scaling and normalisation."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from srheat.carnot import (
    euclidean_kernel,
    grushin_kernel,
    heisenberg_distance,
    heisenberg_inv,
    heisenberg_kernel,
    heisenberg_mul,
)


def test_heisenberg_on_diagonal_closed_form():
    # e(t, 0, 0) = 1 / (16 t^2) for X1^2 + X2^2 with [X1, X2] = d_z
    for t in (0.25, 1.0, 3.0):
        assert heisenberg_kernel(t, (0, 0, 0)) == pytest.approx(1 / (16 * t * t), rel=1e-9)


def heis_sublaplacian(f, p, h=1e-3):
    x, y, z = p

    def X1(g):
        return lambda q: (g((q[0] + h, q[1], q[2] - q[1] * h / 2)) - g((q[0] - h, q[1], q[2] + q[1] * h / 2))) / (2 * h)

    def X2(g):
        return lambda q: (g((q[0], q[1] + h, q[2] + q[0] * h / 2)) - g((q[0], q[1] - h, q[2] - q[0] * h / 2))) / (2 * h)

    return X1(X1(f))(p) + X2(X2(f))(p)


@pytest.mark.parametrize("p", [(0.3, -0.2, 0.1), (0.0, 0.5, -0.4)])
def test_heisenberg_solves_heat_equation(p):
    t, dt = 0.7, 1e-4
    f = lambda q: heisenberg_kernel(t, q)  # noqa: E731
    lhs = (heisenberg_kernel(t + dt, p) - heisenberg_kernel(t - dt, p)) / (2 * dt)
    rhs = heis_sublaplacian(f, p, h=2e-3)
    assert lhs == pytest.approx(rhs, rel=2e-4, abs=1e-7)


@pytest.mark.parametrize("x", [(0.3, 0.2), (-0.5, 0.0)])
def test_grushin_solves_heat_equation(x):
    t, dt, h = 0.6, 1e-4, 2e-3
    y = (0.1, -0.1)
    e = lambda s, a, b: grushin_kernel(s, (a, b), y)  # noqa: E731
    a, b = x
    lhs = (e(t + dt, a, b) - e(t - dt, a, b)) / (2 * dt)
    d11 = (e(t, a + h, b) - 2 * e(t, a, b) + e(t, a - h, b)) / h ** 2
    d22 = (e(t, a, b + h) - 2 * e(t, a, b) + e(t, a, b - h)) / h ** 2
    assert lhs == pytest.approx(d11 + a * a * d22, rel=2e-4, abs=1e-7)


@given(st.floats(0.3, 2.0), st.floats(0.5, 2.0))
def test_grushin_dilation_scaling(t, lam):
    x, y = np.array([0.2, 0.1]), np.array([-0.1, 0.05])
    w = np.array([1.0, 2.0])
    lhs = grushin_kernel(lam ** 2 * t, x * lam ** w, y * lam ** w)
    assert lhs == pytest.approx(lam ** -3 * grushin_kernel(t, x, y), rel=1e-7)


def test_grushin_symmetric_and_normalised():
    assert grushin_kernel(0.5, (0.2, 0.3), (-0.1, 0.0)) == pytest.approx(grushin_kernel(0.5, (-0.1, 0.0), (0.2, 0.3)))
    # mass over x2 at fixed x1 is the 1-D Gaussian in x1 (the Fourier variable 0 mode)
    # the window reaches |x2| = 16 >> t, where plain quadrature of the Fourier integral used to break down
    z = np.linspace(-16, 16, 1601)
    vals = np.array([grushin_kernel(0.5, (0.0, 0.0), (0.4, v)) for v in z])
    assert np.all(vals > -1e-15)
    inner = integrate.trapezoid(vals, z)
    assert inner == pytest.approx(euclidean_kernel(0.5, [0.0], [0.4]), rel=1e-6)


def test_euclidean_normalised_and_semigroup():
    assert integrate.quad(lambda y: euclidean_kernel(0.3, [0.1], [y]), -np.inf, np.inf)[0] == pytest.approx(1.0)
    conv = integrate.quad(lambda z: euclidean_kernel(0.2, [0.0], [z]) * euclidean_kernel(0.3, [z], [0.5]),
                          -np.inf, np.inf)[0]
    assert conv == pytest.approx(euclidean_kernel(0.5, [0.0], [0.5]), rel=1e-8)


def test_heisenberg_left_invariance():
    g = np.array([0.4, -0.3, 0.2])
    p, q = np.array([0.1, 0.2, -0.3]), np.array([-0.2, 0.0, 0.1])
    assert heisenberg_kernel(0.5, heisenberg_mul(g, p), heisenberg_mul(g, q)) == pytest.approx(
        heisenberg_kernel(0.5, p, q), rel=1e-9)
    np.testing.assert_allclose(heisenberg_mul(p, heisenberg_inv(p)), 0.0, atol=1e-15)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 5))
def test_heisenberg_distance_homogeneous(x, y, z, lam):
    d = heisenberg_distance((x, y, z))
    assert heisenberg_distance((lam * x, lam * y, lam * lam * z)) == pytest.approx(lam * d, rel=1e-7, abs=1e-9)


def test_heisenberg_distance_special_values():
    assert heisenberg_distance((0.6, 0.8, 0.0)) == pytest.approx(1.0)
    assert heisenberg_distance((0.0, 0.0, 1.0)) == pytest.approx(np.sqrt(4 * np.pi))
    # the vertical distance is the limit of nearby non-vertical points
    assert heisenberg_distance((1e-6, 0.0, 1.0)) == pytest.approx(np.sqrt(4 * np.pi), rel=1e-4)
