import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from wkblab.errors import NonIntegrableError
from wkblab.quadrature import (LegendreMesh, cell_integrals, filon_legendre, gauss_legendre,
                               integrate, oscillatory_tail)


def test_gauss_rule_exact_for_polynomials():
    s, w = gauss_legendre(6)
    for k in range(12):
        assert np.dot(w, s ** k) == pytest.approx((1 + (-1) ** k) / (k + 1), abs=1e-14)
    with pytest.raises(ValueError):
        s[0] = 0.0


def test_cell_integrals_sum():
    edges = np.linspace(0, math.pi, 9)
    vals = cell_integrals(np.sin, edges)
    np.testing.assert_allclose(vals, np.cos(edges[:-1]) - np.cos(edges[1:]), rtol=1e-12)


def test_adaptive_handles_sharp_peak():
    f = lambda x: 1.0 / (1e-4 + (x - 0.3) ** 2)
    ref = (math.atan(0.7 / 1e-2) + math.atan(0.3 / 1e-2)) / 1e-2
    assert integrate(f, 0.0, 1.0) == pytest.approx(ref, rel=1e-9)


def test_integrable_singularity():
    assert integrate(lambda x: np.abs(x - 0.4) ** -0.5, 0.0, 1.0, singular_points=[0.4]) == \
        pytest.approx(2 * (math.sqrt(0.4) + math.sqrt(0.6)), rel=1e-8)


def test_non_integrable_singularity():
    with pytest.raises(NonIntegrableError):
        integrate(lambda x: 1.0 / x, 0.0, 1.0, singular_points=[0.0])


def test_complex_integrand():
    val = integrate(lambda x: np.exp(1j * x), 0.0, 2.0)
    assert val == pytest.approx((np.exp(2j) - 1) / 1j, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), w=st.floats(0.01, 10))
def test_cell_integrals_additive(a, w):
    f = lambda x: np.cos(3 * x) * np.exp(-0.1 * x * x)
    b = a + w
    m = a + 0.37 * w
    whole = integrate(f, a, b)
    parts = cell_integrals(f, [a, m, b]).sum()
    assert parts == pytest.approx(whole, abs=1e-11)


# ------------------------------------------------------------------ mesh
@pytest.fixture
def mesh():
    return LegendreMesh(np.array([0.0, 0.5, 2.0, 3.0]), 16)


def test_mesh_interpolation_and_derivative(mesh):
    vals = np.exp(mesh.nodes.ravel())
    x = np.array([0.1, 0.5, 1.7, 3.0])
    np.testing.assert_allclose(mesh.interpolate(vals, x), np.exp(x), rtol=1e-13)
    np.testing.assert_allclose(mesh.derivative(vals, x), np.exp(x), rtol=1e-10)


def test_mesh_cumulative_and_tail(mesh):
    vals = np.cos(mesh.nodes.ravel())
    x = np.array([0.0, 0.3, 1.1, 3.0])
    np.testing.assert_allclose(mesh.cumulative(vals, x), np.sin(x), atol=1e-14)
    np.testing.assert_allclose(mesh.tail(vals, x), math.sin(3.0) - np.sin(x), atol=1e-14)
    np.testing.assert_allclose(mesh.cumulative_at_nodes(vals).ravel(), np.sin(mesh.nodes.ravel()), atol=1e-14)
    np.testing.assert_allclose(mesh.tail_at_nodes(vals).ravel(),
                               math.sin(3.0) - np.sin(mesh.nodes.ravel()), atol=1e-14)


def test_mesh_rejects_outside_points(mesh):
    with pytest.raises(ValueError):
        mesh.interpolate(np.zeros(mesh.nodes.size), np.array([3.5]))
    with pytest.raises(ValueError):
        LegendreMesh([0.0, 0.0, 1.0])


# ------------------------------------------------------------ oscillatory
def test_filon_long_cells():
    g = lambda t: 1.0 / (1.0 + t)
    edges = np.array([0.0, 1.0, 4.0, 13.0, 40.0])  # later cells span many periods at omega = 7
    got = filon_legendre(g, 7.0, edges, order=32).sum()
    re = quad(lambda t: g(t), 0, 40, weight="cos", wvar=7)[0]
    im = quad(lambda t: g(t), 0, 40, weight="sin", wvar=7)[0]
    assert got == pytest.approx(re + 1j * im, abs=1e-10)


@pytest.mark.parametrize("omega", [-2.0, 3.0])
def test_oscillatory_tail_against_quad(omega):
    X = 200.0
    g = lambda t: (1.0 + t) ** -0.6
    got = oscillatory_tail(g, omega, X)
    re = quad(g, X, math.inf, weight="cos", wvar=abs(omega), limlst=200)[0]
    im = quad(g, X, math.inf, weight="sin", wvar=abs(omega), limlst=200)[0] * np.sign(omega)
    assert abs(got - (re + 1j * im)) < 1e-10


def test_oscillatory_tail_zero_frequency():
    with pytest.raises(ValueError):
        oscillatory_tail(np.exp, 0.0, 1.0)
