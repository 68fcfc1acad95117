import math

import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from blab import bubble
from blab.bubble import (BubbleMoments, BubbleParams, DimensionError, DivergentMomentError, alpha,
                         critical_exponent, sphere_constants)


# oracles ---------------------------------------------------------------------------------

@pytest.mark.parametrize("m", [3, 5, 9])
def test_profile_matches_symbolic_laplacian(m):
    r = sp.symbols("r", positive=True)
    U = sp.Integer(m * (m - 2)) ** sp.Rational(m - 2, 4) * (1 + r ** 2) ** sp.Rational(-(m - 2), 2)
    lap = sp.diff(U, r, 2) + (m - 1) / r * sp.diff(U, r)
    f_U, f_lap = sp.lambdify(r, U), sp.lambdify(r, lap)
    rr = np.linspace(0.1, 7.0, 23)
    np.testing.assert_allclose(bubble.profile(m, rr), f_U(rr), rtol=1e-13)
    np.testing.assert_allclose(bubble.profile_laplacian(m, rr), f_lap(rr), rtol=1e-11, atol=1e-14)


@pytest.mark.parametrize("p,q", [(5.0, 1.0), (9.0, 4.5), (7.3, 0.2), (3.5, -0.5)])
def test_moment_against_mpmath(p, q):
    mpmath.mp.dps = 30
    ref = mpmath.quad(lambda r: r ** q / (1 + r) ** p, [0, 1, mpmath.inf])
    assert bubble.moment_value(p, q) == pytest.approx(float(ref), rel=1e-13)
    assert bubble.moment_quadrature(p, q) == pytest.approx(float(ref), rel=1e-11)


def test_sobolev_constant_is_gradient_energy():
    for m in (3, 5, 9):
        S = sphere_constants(m).K_m ** (-m)
        bm = BubbleMoments(m)
        assert bm.grad_sq() == pytest.approx(S, rel=1e-12)
        # U solves -Delta U = U^(2*-1), so both energies coincide
        assert bm.crit_power() == pytest.approx(S, rel=1e-12)


def test_sphere_volumes():
    # omega_m is the area of the unit m-sphere S^m in R^(m+1)
    assert sphere_constants(3).omega_m == pytest.approx(2 * math.pi ** 2)
    assert sphere_constants(3).omega_m_minus_1 == pytest.approx(4 * math.pi)


# bubble equation and kernel ------------------------------------------------------------------

@pytest.mark.parametrize("m", [5, 6, 9, 12])
def test_bubble_residual_roundoff(m):
    assert bubble.bubble_residual(m, np.linspace(0, 50, 200), relative=True) < 1e-10


@pytest.mark.parametrize("m,i", [(3, 0), (5, 0), (5, 3), (9, 0), (9, 9)])
def test_kernel_solves_linearised_equation(m, i):
    z = np.random.default_rng(1).normal(size=(50, m))
    scale = np.max(np.abs(bubble.kernel_laplacian(m, i, z)))
    assert bubble.kernel_residual(m, i, z) / scale < 1e-12


def test_translation_kernel_is_partial_derivative():
    m, h = 5, 1e-6
    z = np.random.default_rng(2).normal(size=(10, m))
    e = np.zeros(m)
    e[1] = h
    fd = (bubble.bubble_eval(m, z + e) - bubble.bubble_eval(m, z - e)) / (2 * h)
    np.testing.assert_allclose(bubble.kernel_eval(m, 2, z), fd, rtol=1e-7, atol=1e-10)


def test_kernel_index_range():
    with pytest.raises(IndexError):
        bubble.kernel_eval(5, 6, np.zeros((1, 5)))


def test_rescaled_bubble_preserves_peak_scaling():
    m = 6
    p = BubbleParams(0.25, np.array([0.5, 0, 0, 0, 0, 0]))
    y = p.center(m)
    assert bubble.bubble_rescaled(m, p, y[None])[0] == pytest.approx(0.25 ** (-(m - 2) / 2) * alpha(m))


def test_bubble_params_validation():
    with pytest.raises(ValueError):
        BubbleParams(-1.0)
    with pytest.raises(ValueError):
        BubbleParams.from_eps(0.0, 1.0)
    assert BubbleParams.from_eps(-0.01, 4.0).delta == pytest.approx(0.2)


def test_dimension_errors():
    with pytest.raises(DimensionError):
        bubble.check_dimension(2)
    with pytest.raises(DivergentMomentError):
        bubble.moment_value(2.0, 1.5)
    with pytest.raises(DimensionError):
        bubble.fourth_moment_checks(4)


# moment identities -------------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(q=st.floats(-0.9, 10.0), gap=st.floats(1.1, 15.0))
def test_recurrences_hold(q, gap):
    first, second = bubble.moment_recurrences(q + gap, q)
    assert first < 1e-12 and second < 1e-12


@pytest.mark.parametrize("m", [5, 9])
def test_anchor(m):
    lhs, rhs = bubble.anchor_identity(m)
    assert lhs == pytest.approx(rhs, rel=1e-10)


@pytest.mark.parametrize("m", [5, 9])
def test_beta_and_quadrature_moments_agree(m):
    b, q = BubbleMoments(m, "beta"), BubbleMoments(m, "quad")
    for k in (0, 1):
        assert b.grad_sq(k) == pytest.approx(q.grad_sq(k), rel=1e-10)
    assert b.square() == pytest.approx(q.square(), rel=1e-10)
    s = critical_exponent(m) - 1 - 0.01
    assert b.power(s) == pytest.approx(q.power(s), rel=1e-10)


def test_fourth_moment_decomposition_coefficient_is_one_third():
    rep = bubble.fourth_moment_checks(9)
    assert rep["a"].passed and rep["c"].passed and rep["b_third"].passed
    assert not rep["b"].passed
    assert rep["b"].error == pytest.approx(0.5, rel=1e-9)


def test_isotropy_forces_one_third():
    # contracting delta_ij delta_kh + perms at i=j=k=h gives 3, so c * 3 = 1
    m = 7
    e4 = np.zeros(m, dtype=int)
    e4[0] = 4
    e22 = np.zeros(m, dtype=int)
    e22[:2] = 2
    ratio = bubble.grad_weight_moment(m, e22) / bubble.grad_weight_moment(m, e4)
    assert ratio == pytest.approx(1 / 3, rel=1e-13)
