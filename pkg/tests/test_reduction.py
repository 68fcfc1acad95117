import math

import numpy as np
import pytest

from blab import bubble, energy, geometry, reduction
from blab.energy import RegimeError
from blab.grids import DiscreteField, TensorGrid
from blab.quadrature import radial_integral, sphere_area
from blab.reduction import KernelProjector, SymmetryError

M = 9


@pytest.fixture(scope="module")
def model():
    return geometry.flat(M, a_hess=2 * np.eye(M), h0=1.0)


# ansatz derivatives -----------------------------------------------------------------------

def test_eta_derivative_is_minus_translation_kernel():
    m = 5
    mod = geometry.flat(m)
    eps, t, h = 0.01, 1.3, 1e-6
    eta = np.array([0.2, -0.1, 0.0, 0.3, 0.1])
    y = 0.05 * np.random.default_rng(0).normal(size=(7, m))
    for k in (1, 4):
        e = np.zeros(m)
        e[k - 1] = h
        fd = (reduction.W_point(mod, eps, t, eta + e, y) - reduction.W_point(mod, eps, t, eta - e, y)) / (2 * h)
        np.testing.assert_allclose(reduction.dW_deta_point(mod, eps, t, eta, k, y), fd, rtol=1e-6, atol=1e-6)


def test_t_derivative():
    m = 5
    mod = geometry.flat(m)
    eps, t, h = 0.01, 1.3, 1e-6
    eta = np.array([0.2, -0.1, 0.0, 0.3, 0.1])
    y = 0.05 * np.random.default_rng(1).normal(size=(7, m))
    fd = (reduction.W_point(mod, eps, t + h, eta, y) - reduction.W_point(mod, eps, t - h, eta, y)) / (2 * h)
    np.testing.assert_allclose(reduction.dW_dt_point(mod, eps, t, eta, y), fd, rtol=1e-6, atol=1e-6)


# projection and adjoint ---------------------------------------------------------------------

def test_radial_projector(model):
    grid = energy.make_grid(model, 2.0 ** -10, 1.0)
    Z = reduction.build_Z(model, 2.0 ** -10, 1.0, grid=grid)
    P = KernelProjector(grid, [Z])
    f = np.random.default_rng(2).normal(size=grid.n)
    pf = P(f)
    np.testing.assert_allclose(P(pf), pf, atol=1e-12 * np.max(np.abs(pf)))
    assert abs(Z.values @ grid.apply_A(pf)) < 1e-10 * Z.norm_H() * DiscreteField(pf, grid).norm_H()
    with pytest.raises(SymmetryError):
        reduction.build_Z(model, 2.0 ** -10, 1.0, i=1, grid=grid)


def test_tensor_projector_full_kernel():
    m = 3
    mod = geometry.flat(m, h0=1.0)
    grid = TensorGrid(mod, 32, math.pi)
    eps, t = 0.5, 5.0
    Z = [reduction.build_Z(mod, eps, t, np.array([0.1, 0, 0]), i, grid=grid) for i in range(m + 1)]
    P = KernelProjector(grid, Z)
    f = np.random.default_rng(3).normal(size=grid.n)
    pf = P(f)
    for z in Z:
        assert abs(z.values @ grid.apply_A(pf)) < 1e-9 * z.norm_H() * math.sqrt(pf @ grid.apply_A(pf))
    np.testing.assert_allclose(P(pf), pf, atol=1e-10 * np.max(np.abs(pf)))


def test_adjoint_represents_l2_pairing(model):
    grid = energy.make_grid(model, 2.0 ** -10, 1.0)
    rng = np.random.default_rng(4)
    v = DiscreteField(rng.normal(size=grid.n), grid)
    phi = rng.normal(size=grid.n)
    u = reduction.adjoint_apply(model, v)
    lhs = u.values @ grid.apply_A(phi)
    rhs = grid.wq_vol @ (grid.to_quad(v.values) * grid.to_quad(phi))
    assert lhs == pytest.approx(rhs, rel=1e-9)
    with pytest.raises(ValueError):
        reduction.adjoint_apply(model, DiscreteField(np.full(grid.n, np.nan), grid))


# fixed point ------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def states(model):
    return {k: reduction.correction_fixed_point(model, 2.0 ** -k, 1.0) for k in (10, 12, 14)}


def test_fixed_point_contracts(states):
    for s in states.values():
        assert 0 < s.max_contraction < 1
        assert s.residual_H < 1e-8 * s.ansatz.norm_H()


def test_correction_lies_in_complement(model, states):
    s = states[12]
    grid = s.correction.grid
    Z = reduction.build_Z(model, s.eps, s.t, grid=grid)
    assert abs(Z.values @ grid.apply_A(s.correction.values)) < 1e-9 * Z.norm_H() * s.correction.norm_H()


def test_correction_norm_scales_like_eps_log_eps(states):
    ratios = [s.correction_norm / (abs(s.eps * math.log(abs(s.eps))) * s.ansatz.norm_H()) for s in states.values()]
    assert max(ratios) / min(ratios) < 2.0


def test_fixed_point_negative_eps(model):
    s = reduction.correction_fixed_point(geometry.flat(M, a_hess=-0.05 * np.eye(M), h0=1.0), -2.0 ** -12, 1.0)
    assert s.max_contraction < 1
    assert s.correction_norm < 0.05 * s.ansatz.norm_H()


def test_fixed_point_rejects_non_radial_data():
    mod = geometry.flat(M, a_hess=np.diag(np.linspace(1, 2, M)), h0=1.0)
    with pytest.raises(SymmetryError):
        reduction.correction_fixed_point(mod, 2.0 ** -12, 1.0)
    with pytest.raises(SymmetryError):
        reduction.correction_fixed_point(geometry.flat(M, h0=1.0), 2.0 ** -12, 1.0, np.full(M, 0.1))


def test_state_summary_is_serialisable(states):
    assert '"iterations"' in reduction.dumps_manifest(states[10].summary())


# reduced problem --------------------------------------------------------------------------------

def test_reduced_solve_approaches_corrected_t0(model):
    sol = reduction.reduced_solve(model, 2.0 ** -14, convention="corrected")
    assert sol.relative_t_error < 0.01
    assert sol.gradient < 1e-5
    rep = reduction.verify_solution(model, sol.eps, sol.solution)
    assert rep.argmax_radius <= rep.cell_size
    assert rep.minimum_on_support > 0
    assert rep.width_ratio == pytest.approx(math.sqrt(sol.t_eps), rel=0.05)
    assert "newton" in sol.manifest()


def test_reduced_solve_refuses_wrong_regime(model):
    with pytest.raises(RegimeError):
        reduction.reduced_solve(model, -2.0 ** -12)


def test_residual_decreases_under_refinement(model):
    res = reduction.residual_refinement(model, 2.0 ** -12, 1.0457)
    assert res[0] > res[1] > res[2]
    assert res[2] < 1e-6


def test_weighted_gradient_norm_order(model):
    vals = []
    ks = (10, 12, 14)
    for k in ks:
        W = energy.build_W(model, 2.0 ** -k, 1.0)
        vals.append(reduction.weighted_gradient_norm(model, W, 2.0 ** -k))
    deltas = [2.0 ** (-k / 2) for k in ks]
    assert reduction.loglog_slope(deltas, vals) == pytest.approx(2.0, abs=0.05)


def test_multiplier_ladder(model):
    run = reduction.multiplier_ladder(model, [2.0 ** -10, 2.0 ** -12, 2.0 ** -14], 1.0)
    sums = run.multiplier_sums()
    assert all(np.isfinite(sums)) and sums[0] > sums[-1]
    assert math.isfinite(run.multiplier_exponent())


def test_dilation_kernel_norm_at_unit_scale():
    mod = geometry.flat(M, h0=1e-3, cutoff_radius=60.0)
    Z = reduction.build_Z(mod, 1.0, 1.0)
    ref = sphere_area(M - 1) * radial_integral(lambda r: bubble.kernel0_dr(M, r) ** 2 * r ** (M - 1), decay=M - 1)
    assert Z.norm_H() ** 2 == pytest.approx(mod.a0 * ref, rel=0.05)


def test_correction_improves_residual_more_as_eps_shrinks(model):
    gains = []
    for k in (10, 14):
        s = reduction.correction_fixed_point(model, 2.0 ** -k, 1.0457)
        r_w = reduction.verify_solution(model, s.eps, s.ansatz).residual
        r_u = reduction.verify_solution(model, s.eps, s.solution).residual
        gains.append(r_w / r_u)
    assert gains[0] > 1 and gains[1] > gains[0]
