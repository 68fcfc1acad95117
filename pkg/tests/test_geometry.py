import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blab import geometry
from blab.geometry import (ChartExitError, Cutoff, ModelError, WarpedProduct, flat, metric_inverse_at,
                           model_from_config, random_jet, round_sphere, scalar_curvature, sqrt_det_g)


@pytest.mark.parametrize("m", [3, 9])
@pytest.mark.parametrize("rho", [1.0, 2.0, 0.5])
def test_round_sphere_scalar_curvature(m, rho):
    assert scalar_curvature(round_sphere(m, rho)) == pytest.approx(m * (m - 1) / rho ** 2, rel=1e-14)


def test_sphere_jet_matches_exact_metric():
    # exact normal-coordinate metric of S^3: g = dr^2 + sin(r)^2 dOmega
    m = 3
    model = round_sphere(m)
    y = np.array([0.01, -0.02, 0.015])
    r = np.linalg.norm(y)
    P = np.outer(y, y) / r ** 2
    g_exact = P + (math.sin(r) / r) ** 2 * (np.eye(m) - P)
    np.testing.assert_allclose(metric_inverse_at(model, y), np.linalg.inv(g_exact), atol=5 * r ** 4)


def test_volume_density_second_order():
    model = random_jet(5, 3, scale=0.2)
    y = 1e-2 * np.random.default_rng(0).normal(size=(6, 5))
    exact = np.linalg.det(metric_inverse_at(model, y)) ** -0.5
    np.testing.assert_allclose(sqrt_det_g(model, y), exact, atol=1e-7)


def test_flat_curvature_zero_and_flags():
    model = flat(6, a_hess=2 * np.eye(6))
    assert scalar_curvature(model) == 0.0
    assert model.is_flat and model.is_critical and model.is_nondegenerate
    assert model.is_radially_symmetric()
    assert model.laplacian_a() == pytest.approx(12.0)
    assert not flat(6, a_hess=np.diag([1, 2, 1, 1, 1, 1.0])).is_radially_symmetric()


def test_model_validation():
    with pytest.raises(ModelError):
        flat(4, a0=-1.0)
    with pytest.raises(ModelError):
        flat(4, a_hess=-np.eye(4))
    with pytest.raises(ModelError):
        geometry.ManifoldModel(3, np.ones((3, 3, 3, 2)))
    bad = np.zeros((3,) * 4)
    bad[0, 1, 0, 0] = 1.0
    with pytest.raises(ModelError):
        geometry.ManifoldModel(3, bad)


def test_chart_exit():
    model = round_sphere(3)
    with pytest.raises(ChartExitError):
        model.a(np.array([4.0, 0, 0]))


def test_cutoff_profile():
    c = Cutoff(2.0)
    assert c(np.array([0.0, 1.0]))[0] == 1.0 and c(1.0) == 1.0
    assert c(2.0) == 0.0 and c(3.0) == 0.0
    r = np.linspace(0, 2, 2001)
    assert np.max(np.abs(c.derivative(r))) == pytest.approx(c.max_slope, rel=1e-5)
    h = 1e-6
    np.testing.assert_allclose(c.derivative(1.3), (c(1.3 + h) - c(1.3 - h)) / (2 * h), rtol=1e-7)
    np.testing.assert_allclose(c.second_derivative(1.3),
                               (c.derivative(1.3 + h) - c.derivative(1.3 - h)) / (2 * h), rtol=1e-6)


@settings(max_examples=25, deadline=None)
@given(m=st.integers(3, 7), seed=st.integers(0, 10_000))
def test_curvature_rotation_invariant(m, seed):
    model = random_jet(m, seed)
    Q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(m, m)))
    H = np.einsum("ai,bj,ck,dl,ijkl->abcd", Q, Q, Q, Q, model.metric_hessian)
    rotated = model.with_changes(metric_hessian=H)
    assert scalar_curvature(rotated) == pytest.approx(scalar_curvature(model), abs=1e-12)


def test_model_from_config_kinds():
    assert model_from_config({"m": 5, "a_hess": 2.0}).laplacian_a() == pytest.approx(10.0)
    assert model_from_config({"kind": "round_sphere", "m": 3, "rho": 2.0}).name == "round_sphere"
    assert model_from_config({"kind": "random_jet", "m": 4, "seed": 1}).name == "random_jet"
    w = model_from_config({"kind": "warped", "m": 5, "omega_hess": (0.2 * np.eye(5)).tolist()})
    assert w.a0 == 1.0
    with pytest.raises(ModelError):
        model_from_config({"kind": "torus", "m": 4})


# warped products -------------------------------------------------------------------------

def _invariant(m):
    def u(x):
        y = x[:, :m]
        return np.exp(-np.sum(y * y, axis=1)) * (1 + 0.3 * y[:, 0])
    return u


@pytest.mark.parametrize("k", [1, 2])
def test_warped_drift_exact_for_fiber_exponent(k):
    m = 3
    wp = WarpedProduct(flat(m), k, 1.0, omega_grad=[0.1, 0, 0.05], omega_hess=0.3 * np.eye(m), exponent=k)
    e1, e2 = geometry.warped_laplacian_check(wp, _invariant(m), steps=(0.02, 0.01))
    assert e2 < 1e-3
    assert e1 / e2 == pytest.approx(4.0, rel=0.15)


def test_warped_drift_default_exponent_is_base_dimension():
    m, k = 3, 1
    wp = WarpedProduct(flat(m), k, 1.0, omega_grad=[0.1, 0, 0.05], omega_hess=0.3 * np.eye(m))
    assert wp.exponent == m
    e1, e2 = geometry.warped_laplacian_check(wp, _invariant(m), steps=(0.02, 0.01))
    # mismatch of (m - k) * grad omega . grad u / omega does not shrink with the step
    assert e2 > 1e-2 and e1 / e2 < 1.2
    # with k = m the default is exact
    wp_m = WarpedProduct(flat(m), m, 1.0, omega_grad=[0.1, 0, 0.05], omega_hess=0.3 * np.eye(m))
    assert geometry.warped_laplacian_check(wp_m, _invariant(m))[-1] < 1e-3


def test_warped_weight_jet_for_minimal_fiber():
    m = 5
    H = np.diag([0.1, 0.2, 0.3, 0.4, 0.5])
    wp = WarpedProduct(flat(m), 2, 1.5, omega_hess=H)
    a0, ag, ah = wp.weight_jet()
    assert wp.fiber_is_minimal and not np.any(ag)
    # Delta a / a = p Delta omega / omega at a critical point of omega
    assert np.trace(ah) / a0 == pytest.approx(m * np.trace(H) / 1.5)
    model = geometry.reduce_to_anisotropic(wp, h0=0.7)
    assert model.h0 == 0.7 and model.a0 == pytest.approx(1.5 ** m)


def test_warped_rejects_fiber_dependent_data():
    m = 3
    wp = WarpedProduct(flat(m), 1, 1.0)
    with pytest.raises(ModelError):
        geometry.warped_laplacian_check(wp, lambda x: np.sin(x[:, m]))
    with pytest.raises(ModelError):
        geometry.reduce_to_anisotropic(WarpedProduct(flat(m), 1, 1.0, h_invariant=False))
