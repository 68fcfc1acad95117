import math

import numpy as np
import pytest

from blab import bubble
from blab.geometry import flat, round_sphere
from blab.grids import (DiscreteField, NonCoerciveError, RadialGrid, TensorGrid, angular_coefficients,
                        s_eps)
from blab.quadrature import radial_integral, sphere_area


def test_angular_coefficients_flat():
    m = 5
    co = angular_coefficients(flat(m))
    om = sphere_area(m - 1)
    assert co.A[0] == pytest.approx(om) and co.C[0] == pytest.approx(om) and co.M[0] == pytest.approx(om)
    assert not np.any(co.C[1:])


def test_angular_coefficients_weight_hessian():
    # average of 1/2 y^T A y over the sphere of radius rho is rho^2 tr(A) / (2m)
    m = 4
    A = np.diag([1.0, 2.0, 0.5, 0.5])
    co = angular_coefficients(flat(m, a_hess=A))
    assert co.C[2] / sphere_area(m - 1) == pytest.approx(np.trace(A) / (2 * m))


@pytest.mark.parametrize("m", [3, 5, 9])
def test_radial_grid_reproduces_bubble_energies(m):
    R = 40.0
    g = RadialGrid(flat(m, cutoff_radius=R), 1.0, degree=10, inner_elements=40)
    u = bubble.profile(m, g.nodes)
    om = sphere_area(m - 1)
    grad_ref = om * radial_integral(lambda r: bubble.profile_dr(m, r) ** 2 * r ** (m - 1), upper=R)
    sq_ref = om * radial_integral(lambda r: bubble.profile(m, r) ** 2 * r ** (m - 1), upper=R)
    assert u @ g.A @ u == pytest.approx(grad_ref, rel=1e-10)
    assert g.wq_vol @ g.to_quad(u) ** 2 == pytest.approx(sq_ref, rel=1e-10)


def test_radial_grid_spectral_convergence():
    m, delta = 6, 0.5
    model = flat(m, cutoff_radius=40.0)
    exact = bubble.BubbleMoments(m).crit_power()
    errs = []
    for p in (2, 3, 4):
        g = RadialGrid(model, delta, degree=p, inner_elements=16)
        u = bubble.profile(m, g.to_quad(g.nodes) / delta)
        errs.append(abs(g.wq_vol @ u ** (2 * m / (m - 2)) * delta ** (-m) - exact) / exact)
    assert errs[2] < errs[1] < errs[0]


def test_radial_grid_refuses_noncoercive_form():
    g = RadialGrid(flat(5, h0=0.0), 0.1)
    with pytest.raises(NonCoerciveError):
        g.solve_A(np.ones(g.n))


def test_radial_solve_inverts_form():
    g = RadialGrid(flat(5, h0=1.0, a_hess=np.eye(5)), 0.1)
    b = np.random.default_rng(0).normal(size=g.n)
    np.testing.assert_allclose(g.apply_A(g.solve_A(b)), b, atol=1e-9 * np.max(np.abs(b)))


def test_radial_evaluate_interpolates_polynomials():
    g = RadialGrid(flat(5), 0.2, degree=6, inner_elements=8)
    vals = g.nodes ** 3 - 2 * g.nodes
    rho = np.linspace(0, g.radius, 37)
    np.testing.assert_allclose(g.evaluate(vals, rho), rho ** 3 - 2 * rho, atol=1e-10)


def test_tensor_grid_fourier_mode():
    m, n, L = 3, 16, math.pi
    g = TensorGrid(flat(m, h0=1.0), n, L)
    u = np.cos(2 * g.points[:, 0]) * np.sin(g.points[:, 1])
    np.testing.assert_allclose(g.apply_A(u), (4 + 1 + 1) * g.h ** m * u, atol=1e-12)
    np.testing.assert_allclose(g.solve_A(g.apply_A(u)), u, atol=1e-10)


def test_tensor_grid_self_adjoint_on_sphere():
    g = TensorGrid(round_sphere(3, 2.0, h0=1.0), 12, 1.5)
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=g.n), rng.normal(size=g.n)
    assert u @ g.apply_A(v) == pytest.approx(v @ g.apply_A(u), rel=1e-11)


def test_tensor_grid_requires_positive_potential():
    with pytest.raises(NonCoerciveError):
        TensorGrid(flat(3), 8).solve_A(np.zeros(8 ** 3))


def test_field_norms():
    g = TensorGrid(flat(3, h0=1.0), 8, math.pi)
    f = DiscreteField(np.ones(g.n), g)
    vol = (2 * math.pi) ** 3
    assert f.integral() == pytest.approx(vol)
    assert f.norm_H() == pytest.approx(math.sqrt(vol))
    s = s_eps(3, -0.1)
    assert s == pytest.approx(6 + 0.15)
    assert f.norm(-0.1) == pytest.approx(math.sqrt(vol) + vol ** (1 / s))
    assert (2 * f - f).integral() == pytest.approx(vol)
    with pytest.raises(ValueError):
        DiscreteField(np.ones(3), g)
