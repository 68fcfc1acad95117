"""Chart-level models of the base manifold, the weight and warped products.

A model stores the second-order normal-coordinate jet of the inverse metric
at the concentration point together with quadratic jets of the weight ``a``
and the constant value of the potential ``h``.  Every expansion coefficient
of the reduced energy only sees these jets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bubble import check_dimension


class ChartExitError(ValueError):
    """A point was requested outside the normal-coordinate chart."""


class ModelError(ValueError):
    pass


# cutoff ----------------------------------------------------------------------

@dataclass(frozen=True)
class Cutoff:
    """Radial cutoff equal to 1 on ``|y| <= radius/2`` and 0 for ``|y| >= radius``.

    The transition is the quintic smoothstep, which is C^2.  Its steepest
    slope is ``15/(4 radius)``.
    """

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ModelError("cutoff radius must be positive")

    def _x(self, rho):
        half = 0.5 * self.radius
        return np.clip((np.asarray(rho, dtype=float) - half) / half, 0.0, 1.0)

    def __call__(self, rho):
        x = self._x(rho)
        return 1.0 - x ** 3 * (10.0 - 15.0 * x + 6.0 * x * x)

    def derivative(self, rho):
        x = self._x(rho)
        return -30.0 * x * x * (1.0 - x) ** 2 / (0.5 * self.radius)

    def second_derivative(self, rho):
        x = self._x(rho)
        return -60.0 * x * (1.0 - x) * (1.0 - 2.0 * x) / (0.5 * self.radius) ** 2

    @property
    def max_slope(self) -> float:
        return 3.75 / self.radius


# model -----------------------------------------------------------------------

def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ManifoldModel:
    """Second-order chart model of ``(M, g, a, h)`` around the point xi_0.

    ``metric_hessian[i, j, r, k]`` is the second derivative of ``g^{ij}`` in
    ``y_r, y_k`` at the origin.  The inverse metric is
    ``delta_ij + 1/2 H[i,j,r,k] y_r y_k``, so the normal-coordinate gauge
    (identity value, vanishing first derivatives) holds by construction.
    The weight is the quadratic ``a0 + a_grad . y + 1/2 y^T a_hess y`` and
    the potential is the constant ``h0``.
    """

    m: int
    metric_hessian: np.ndarray
    a0: float = 1.0
    a_grad: np.ndarray = None
    a_hess: np.ndarray = None
    h0: float = 0.0
    injectivity_radius: float = math.inf
    cutoff: Cutoff = field(default_factory=lambda: Cutoff(math.pi))
    name: str = "custom"

    def __post_init__(self):
        m = check_dimension(self.m)
        object.__setattr__(self, "m", m)
        H = np.asarray(self.metric_hessian, dtype=float)
        if H.shape != (m,) * 4:
            raise ModelError(f"metric_hessian must have shape {(m,) * 4}, got {H.shape}")
        scale = max(1.0, float(np.max(np.abs(H))))
        if not (np.allclose(H, H.transpose(1, 0, 2, 3), atol=1e-12 * scale)
                and np.allclose(H, H.transpose(0, 1, 3, 2), atol=1e-12 * scale)):
            raise ModelError("metric_hessian must be symmetric in (i,j) and in (r,k)")
        object.__setattr__(self, "metric_hessian", _frozen(H))
        grad = np.zeros(m) if self.a_grad is None else np.asarray(self.a_grad, dtype=float)
        hess = np.zeros((m, m)) if self.a_hess is None else np.asarray(self.a_hess, dtype=float)
        if grad.shape != (m,) or hess.shape != (m, m):
            raise ModelError("weight jet has the wrong shape")
        if not np.allclose(hess, hess.T, atol=1e-12 * max(1.0, float(np.max(np.abs(hess))))):
            raise ModelError("a_hess must be symmetric")
        object.__setattr__(self, "a_grad", _frozen(grad))
        object.__setattr__(self, "a_hess", _frozen(0.5 * (hess + hess.T)))
        if not self.a0 > 0:
            raise ModelError("a(xi_0) must be positive")
        if not self.injectivity_radius > 0:
            raise ModelError("injectivity radius must be positive")
        if self.cutoff.radius > self.injectivity_radius:
            raise ModelError("cutoff radius exceeds the injectivity radius")
        # a must stay positive on the cutoff ball
        r = self.cutoff.radius
        lam = float(np.min(np.linalg.eigvalsh(self.a_hess)))
        if self.a0 - np.linalg.norm(grad) * r + 0.5 * min(lam, 0.0) * r * r <= 0:
            raise ModelError("weight a is not guaranteed positive on the cutoff ball")

    # derived quantities -------------------------------------------------------

    @property
    def is_flat(self) -> bool:
        return not np.any(self.metric_hessian)

    @property
    def is_critical(self) -> bool:
        return not np.any(self.a_grad)

    @property
    def is_nondegenerate(self) -> bool:
        return bool(abs(np.linalg.det(self.a_hess)) > 1e-12 * max(1.0, np.max(np.abs(self.a_hess))) ** self.m)

    @property
    def trace_hessian(self) -> np.ndarray:
        """``S2[r, k] = sum_s H[s, s, r, k]`` (drives the volume element)."""
        return np.einsum("ssrk->rk", self.metric_hessian)

    def laplacian_a(self) -> float:
        """Delta_g a at xi_0; Christoffel symbols vanish there."""
        return float(np.trace(self.a_hess))

    def is_radially_symmetric(self, trials: int = 3, seed: int = 0) -> bool:
        """True when the jets are invariant under random rotations."""
        if not self.is_critical:
            return False
        rng = np.random.default_rng(seed)
        for _ in range(trials):
            Q, _ = np.linalg.qr(rng.standard_normal((self.m, self.m)))
            H = np.einsum("ai,bj,ck,dl,ijkl->abcd", Q, Q, Q, Q, self.metric_hessian, optimize=True)
            A = Q @ self.a_hess @ Q.T
            if not (np.allclose(H, self.metric_hessian, atol=1e-11) and np.allclose(A, self.a_hess, atol=1e-11)):
                return False
        return True

    def check_point(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.m:
            raise ValueError(f"points must have trailing dimension {self.m}")
        if np.any(np.linalg.norm(y, axis=-1) >= self.injectivity_radius):
            raise ChartExitError(f"point outside the chart of radius {self.injectivity_radius}")
        return y

    def a(self, y):
        y = self.check_point(y)
        return self.a0 + y @ self.a_grad + 0.5 * np.einsum("...i,ij,...j->...", y, self.a_hess, y)

    def grad_a(self, y):
        y = self.check_point(y)
        return self.a_grad + y @ self.a_hess

    def with_changes(self, **kw) -> "ManifoldModel":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "m": self.m, "a0": self.a0, "h0": self.h0,
            "a_grad": self.a_grad.tolist(), "a_hess": self.a_hess.tolist(),
            "injectivity_radius": self.injectivity_radius if math.isfinite(self.injectivity_radius) else None,
            "cutoff_radius": self.cutoff.radius,
            "flat": self.is_flat, "scalar_curvature": scalar_curvature(self),
        }


def metric_inverse_at(model: ManifoldModel, y) -> np.ndarray:
    """``g^{ij}(y) = delta_ij + 1/2 H[i,j,r,k] y_r y_k``; supports batched points."""
    y = model.check_point(y)
    return np.eye(model.m) + 0.5 * np.einsum("ijrk,...r,...k->...ij", model.metric_hessian, y, y)


def sqrt_det_g(model: ManifoldModel, y):
    """Second-order volume density ``1 - 1/4 sum H[s,s,r,k] y_r y_k``."""
    y = model.check_point(y)
    return 1.0 - 0.25 * np.einsum("rk,...r,...k->...", model.trace_hessian, y, y)


def scalar_curvature(model: ManifoldModel) -> float:
    H = model.metric_hessian
    return float(np.einsum("iijj->", H) - np.einsum("ijij->", H))


# catalog -----------------------------------------------------------------------

def flat(m: int, *, a0: float = 1.0, a_hess=None, a_grad=None, h0: float = 0.0,
         cutoff_radius: float = math.pi) -> ManifoldModel:
    m = check_dimension(m)
    return ManifoldModel(m, np.zeros((m,) * 4), a0=a0, a_grad=a_grad, a_hess=a_hess, h0=h0,
                         cutoff=Cutoff(cutoff_radius), name="flat")


def sphere_jet(m: int, rho: float = 1.0) -> np.ndarray:
    """Normal-coordinate Hessian of ``g^{ij}`` for the round sphere of radius rho.

    From ``g^{ij} = delta_ij + (|y|^2 delta_ij - y_i y_j)/(3 rho^2) + O(|y|^4)``.
    """
    d = np.eye(m)
    H = (2.0 * np.einsum("ij,rk->ijrk", d, d) - np.einsum("ir,jk->ijrk", d, d)
         - np.einsum("ik,jr->ijrk", d, d))
    return H / (3.0 * rho * rho)


def round_sphere(m: int, rho: float = 1.0, *, a0: float = 1.0, a_hess=None, h0: float = 0.0,
                 cutoff_radius: float = None) -> ManifoldModel:
    m = check_dimension(m)
    inj = math.pi * rho
    r = 0.5 * inj if cutoff_radius is None else cutoff_radius
    return ManifoldModel(m, sphere_jet(m, rho), a0=a0, a_hess=a_hess, h0=h0,
                         injectivity_radius=inj, cutoff=Cutoff(r), name="round_sphere")


def symmetrize_jet(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.transpose(1, 0, 2, 3))
    return 0.5 * (H + H.transpose(0, 1, 3, 2))


def random_jet(m: int, rng=None, scale: float = 0.1, *, a0: float = 1.0, h0: float = 0.0,
               cutoff_radius: float = 1.0, injectivity_radius: float = 2.0,
               nondegenerate_weight: bool = True) -> ManifoldModel:
    """Perturbed-flat model with a random symmetric jet and a critical weight."""
    m = check_dimension(m)
    rng = np.random.default_rng(rng)
    H = symmetrize_jet(scale * rng.standard_normal((m,) * 4))
    a_hess = None
    if nondegenerate_weight:
        B = rng.standard_normal((m, m))
        a_hess = 0.1 * (B @ B.T / m + np.eye(m))
    return ManifoldModel(m, H, a0=a0, a_hess=a_hess, h0=h0, injectivity_radius=injectivity_radius,
                         cutoff=Cutoff(cutoff_radius), name="random_jet")


def model_from_config(cfg: dict) -> ManifoldModel:
    """Build a model from a config mapping (the ``[model]`` table)."""
    try:
        kind = cfg.get("kind", "flat")
        m = int(cfg["m"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"model config needs an integer 'm': {exc}") from None
    a0 = float(cfg.get("a0", 1.0))
    h0 = float(cfg.get("h0", 0.0))
    a_hess = cfg.get("a_hess")
    if isinstance(a_hess, (int, float)):
        a_hess = float(a_hess) * np.eye(m)
    if kind == "flat":
        return flat(m, a0=a0, a_hess=a_hess, a_grad=cfg.get("a_grad"), h0=h0,
                    cutoff_radius=float(cfg.get("cutoff_radius", math.pi)))
    if kind == "round_sphere":
        return round_sphere(m, float(cfg.get("rho", 1.0)), a0=a0, a_hess=a_hess, h0=h0,
                            cutoff_radius=cfg.get("cutoff_radius"))
    if kind == "random_jet":
        return random_jet(m, int(cfg.get("seed", 0)), float(cfg.get("scale", 0.1)), a0=a0, h0=h0)
    if kind == "warped":
        wp = WarpedProduct(
            flat(m, cutoff_radius=float(cfg.get("cutoff_radius", math.pi))),
            int(cfg.get("fiber_dim", 1)), float(cfg.get("omega0", 1.0)),
            cfg.get("omega_grad"), cfg.get("omega_hess"))
        return reduce_to_anisotropic(wp, h0=h0)
    raise ModelError(f"unknown model kind {kind!r}")


# warped products -----------------------------------------------------------------

@dataclass(frozen=True)
class WarpedProduct:
    """``M x_omega K`` with ``omega`` given by its quadratic jet at xi_0.

    ``exponent`` is the power in the induced weight ``a = omega^exponent``;
    it defaults to the base dimension m.  For a fiber of dimension k the
    Laplacian of fiber-invariant functions has drift ``(k/omega) g(grad omega,
    grad u)``, so ``exponent=fiber_dim`` is the geometrically exact choice.
    """

    base: ManifoldModel
    fiber_dim: int
    omega0: float
    omega_grad: np.ndarray = None
    omega_hess: np.ndarray = None
    h_invariant: bool = True
    exponent: int = None

    def __post_init__(self):
        m = self.base.m
        if self.fiber_dim < 1:
            raise ModelError("fiber dimension must be at least 1")
        if not self.omega0 > 0:
            raise ModelError("omega(xi_0) must be positive")
        g = np.zeros(m) if self.omega_grad is None else np.asarray(self.omega_grad, dtype=float)
        H = np.zeros((m, m)) if self.omega_hess is None else np.asarray(self.omega_hess, dtype=float)
        if g.shape != (m,) or H.shape != (m, m):
            raise ModelError("omega jet has the wrong shape")
        object.__setattr__(self, "omega_grad", _frozen(g))
        object.__setattr__(self, "omega_hess", _frozen(0.5 * (H + H.T)))
        if self.exponent is None:
            object.__setattr__(self, "exponent", m)

    @property
    def fiber_is_minimal(self) -> bool:
        return not np.any(self.omega_grad)

    def omega(self, y):
        y = np.asarray(y, dtype=float)
        return self.omega0 + y @ self.omega_grad + 0.5 * np.einsum("...i,ij,...j->...", y, self.omega_hess, y)

    def weight_jet(self):
        """Value, gradient and Hessian of ``omega^p`` at xi_0 by the chain rule."""
        p, w0, g, H = self.exponent, self.omega0, self.omega_grad, self.omega_hess
        a0 = w0 ** p
        a_grad = p * w0 ** (p - 1) * g
        a_hess = p * w0 ** (p - 1) * H + p * (p - 1) * w0 ** (p - 2) * np.outer(g, g)
        return a0, a_grad, a_hess

    def sigma(self, convention: str = "stated") -> float:
        """Curvature threshold of the fiber: Theta = h - sigma for a minimal fiber."""
        from .energy import weight_coefficient

        m = self.base.m
        lap_omega = float(np.trace(self.omega_hess))
        return ((m - 2.0) / (4.0 * (m - 1.0)) * scalar_curvature(self.base)
                - weight_coefficient(m, convention) * self.exponent * lap_omega / self.omega0)


def reduce_to_anisotropic(wp: WarpedProduct, h0: float = None) -> ManifoldModel:
    """Anisotropic model with weight ``a = omega^p`` on the base chart."""
    if not wp.h_invariant:
        raise ModelError("h must be invariant along the fiber to reduce the problem")
    a0, a_grad, a_hess = wp.weight_jet()
    base = wp.base
    return replace(base, a0=a0, a_grad=a_grad, a_hess=a_hess,
                   h0=base.h0 if h0 is None else h0, name=f"warped({base.name})")


def product_laplacian(metric_inv, u, x, step: float):
    """Second-order flux-form Laplace-Beltrami stencil at the points ``x``.

    ``metric_inv(x)`` returns ``(G^{ab}, sqrt|G|)`` at a batch of points.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    h = step
    Ginv0, vol0 = metric_inv(x)
    out = np.zeros(x.shape[0])
    eye = np.eye(n)
    for a in range(n):
        ea = h * eye[a]
        Gp, vp = metric_inv(x + 0.5 * ea)
        Gm, vm = metric_inv(x - 0.5 * ea)
        u0 = u(x)
        out += (vp * Gp[:, a, a] * (u(x + ea) - u0) - vm * Gm[:, a, a] * (u0 - u(x - ea))) / (h * h)
        for b in range(n):
            if b == a:
                continue
            eb = h * eye[b]

            def flux(p):
                G, v = metric_inv(p)
                return v * G[:, a, b] * (u(p + eb) - u(p - eb)) / (2 * h)

            out += (flux(x + ea) - flux(x - ea)) / (2 * h)
    return out / vol0


def warped_laplacian_check(wp: WarpedProduct, test_function, points=None, steps=(0.02, 0.01),
                           seed: int = 0):
    """Compare the product-chart Laplacian with the reduced drift formula.

    The warped metric ``g + omega^2 kappa`` (flat fiber coordinates) is
    discretised by a flux-form stencil in all ``m + k`` coordinates and
    compared with ``Delta_g u + (p/omega) g(grad omega, grad u)`` computed by
    the same stencil on the base, where p is ``wp.exponent``.  Returns the
    max discrepancy at each step size.
    """
    m, k = wp.base.m, wp.fiber_dim
    rng = np.random.default_rng(seed)
    if points is None:
        points = 0.3 * rng.standard_normal((4, m))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    theta = rng.uniform(0.0, 2 * math.pi, (points.shape[0], k))
    full = np.hstack([points, theta])

    # invariance along the fiber
    shift = np.hstack([points, theta + rng.uniform(-1.0, 1.0, theta.shape)])
    u_full, u_shift = test_function(full), test_function(shift)
    if not np.allclose(u_full, u_shift, rtol=1e-12, atol=1e-12 * max(1.0, np.max(np.abs(u_full)))):
        raise ModelError("test function is not invariant along the fiber")

    def base_metric(y):
        Ginv = metric_inverse_at(wp.base, y)
        return Ginv, np.linalg.det(Ginv) ** -0.5

    def product_metric(x):
        y = x[:, :m]
        Ginv, vol = base_metric(y)
        w = wp.omega(y)
        G = np.zeros((x.shape[0], m + k, m + k))
        G[:, :m, :m] = Ginv
        G[:, m:, m:] = np.eye(k)[None] / (w * w)[:, None, None]
        return G, vol * w ** k

    def u_base(y):
        return test_function(np.hstack([y, np.zeros((y.shape[0], k))]))

    out = []
    for h in steps:
        lhs = product_laplacian(product_metric, test_function, full, h)
        lap = product_laplacian(base_metric, u_base, points, h)
        eye = np.eye(m)
        du = np.stack([(u_base(points + h * eye[i]) - u_base(points - h * eye[i])) / (2 * h) for i in range(m)], -1)
        dw = wp.omega_grad + points @ wp.omega_hess
        Ginv, _ = base_metric(points)
        drift = wp.exponent / wp.omega(points) * np.einsum("pi,pij,pj->p", dw, Ginv, du)
        out.append(float(np.max(np.abs(lhs - lap - drift))))
    return out
