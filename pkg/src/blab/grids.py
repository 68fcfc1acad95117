"""Discretisations of the chart ball: radial spectral elements and a periodic tensor grid.

Both grids expose the same small interface used by the energy and the
reduction code:

* ``apply_A(u)`` / ``solve_A(b)``: the discrete form of ``<u, v>_H``, i.e.
  ``int a (g(grad u, grad v) + h u v) dmu_g``, and its inverse;
* ``to_quad(u)``: values at quadrature points, with weights ``wq_vol``
  (volume) and ``wq_a`` (volume times a);
* ``from_quad(f, w)``: the load vector ``sum_q w_q f_q phi_j(x_q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .geometry import ChartExitError, ManifoldModel
from .quadrature import gauss_lobatto, lagrange_matrices, sphere_tensor_integral


class ResolutionError(ValueError):
    """The grid does not resolve the concentration scale."""


class NonCoerciveError(RuntimeError):
    """The discrete H form is not positive definite."""


class LinearSolveError(RuntimeError):
    pass


# angular averages ---------------------------------------------------------------

@dataclass(frozen=True)
class AngularCoefficients:
    """Power-series coefficients of the sphere-averaged chart quantities.

    For a function radial about the centre c, with rho = |y - c|::

        int_S a Q sqrt(g) / rho^2 = sum_n A[n] rho^n      (Q = g^{ij} x_i x_j)
        int_S a sqrt(g)           = sum_n C[n] rho^n
        int_S sqrt(g)             = sum_n M[n] rho^n
    """

    A: np.ndarray
    C: np.ndarray
    M: np.ndarray


def _poly_product_moments(m, factors, max_degree):
    out = np.zeros(max_degree + 1)
    def rec(i, chosen, deg):
        if i == len(factors):
            if deg % 2 == 0:
                out[deg] += sphere_tensor_integral(m, chosen)
            return
        for d, T in factors[i].items():
            rec(i + 1, chosen + [T], deg + d)
    rec(0, [], 0)
    return out


def angular_coefficients(model: ManifoldModel, center=None) -> AngularCoefficients:
    m = model.m
    c = np.zeros(m) if center is None else np.asarray(center, dtype=float)
    H = model.metric_hessian
    A = model.a_hess
    a_poly = {0: np.array(model.a0 + model.a_grad @ c + 0.5 * c @ A @ c),
              1: model.a_grad + A @ c, 2: 0.5 * A}
    S2 = model.trace_hessian
    s_poly = {0: np.array(1.0 - 0.25 * c @ S2 @ c), 1: -0.5 * S2 @ c, 2: -0.25 * S2}
    q_poly = {2: np.eye(m) + 0.5 * np.einsum("ijrk,r,k->ij", H, c, c),
              3: np.einsum("ijrk,r->ijk", H, c), 4: 0.5 * H}
    if not np.any(H):
        s_poly = {0: np.array(1.0)}
        q_poly = {2: np.eye(m)}
    if not np.any(a_poly[1]) and not np.any(a_poly[2]):
        a_poly = {0: a_poly[0]}
    Aco = _poly_product_moments(m, [a_poly, q_poly, s_poly], 8)[2:]
    Cco = _poly_product_moments(m, [a_poly, s_poly], 4)
    Mco = _poly_product_moments(m, [s_poly], 2)
    return AngularCoefficients(Aco, Cco, Mco)


# radial spectral elements --------------------------------------------------------

class RadialGrid:
    """Continuous spectral elements in rho = |y - c| on ``[0, radius]``.

    Element edges follow ``rho = delta sinh(A xi)`` on uniform xi up to
    ``radius/2`` (so the mesh moves smoothly with delta) and are uniform on
    ``[radius/2, radius]``, where the cutoff is polynomial.  The natural
    boundary condition holds at ``rho = radius``.
    """

    kind = "radial"

    def __init__(self, model: ManifoldModel, delta: float, center=None, *, degree: int = 8,
                 inner_elements: int = 24, outer_elements: int = 4, quad_points: int = None,
                 radius: float = None, coefficients: AngularCoefficients = None):
        self.model = model
        self.m = model.m
        self.delta = float(delta)
        self.center = np.zeros(self.m) if center is None else np.asarray(center, dtype=float)
        self.radius = model.cutoff.radius if radius is None else float(radius)
        if np.linalg.norm(self.center) + self.radius >= model.injectivity_radius:
            raise ChartExitError("grid ball leaves the chart")
        self.degree = int(degree)
        self.quad_points = 2 * self.degree if quad_points is None else int(quad_points)
        self.inner_elements, self.outer_elements = int(inner_elements), int(outer_elements)

        half = 0.5 * self.radius
        A = math.asinh(half / self.delta)
        xi = np.linspace(0.0, 1.0, self.inner_elements + 1)
        inner = self.delta * np.sinh(A * xi)
        inner[-1] = half
        outer = np.linspace(half, self.radius, self.outer_elements + 1)[1:]
        self.edges = np.concatenate([inner, outer])
        self._assemble(coefficients or angular_coefficients(model, self.center))

    def _assemble(self, co: AngularCoefficients):
        p, nq = self.degree, self.quad_points
        gll = gauss_lobatto(p)
        xg, wg = np.polynomial.legendre.leggauss(nq)
        V, dV = lagrange_matrices(gll, xg)
        n_el = self.edges.size - 1
        self.n = n_el * p + 1
        nodes = np.empty(self.n)
        rows, cols, bv, dv = [], [], [], []
        rq, wq = np.empty(n_el * nq), np.empty(n_el * nq)
        for e in range(n_el):
            lo, hi = self.edges[e], self.edges[e + 1]
            jac = 0.5 * (hi - lo)
            nodes[e * p:(e + 1) * p + 1] = lo + jac * (gll + 1.0)
            sl = slice(e * nq, (e + 1) * nq)
            rq[sl] = lo + jac * (xg + 1.0)
            wq[sl] = jac * wg
            r_idx = np.repeat(np.arange(e * nq, (e + 1) * nq), p + 1)
            c_idx = np.tile(np.arange(e * p, (e + 1) * p + 1), nq)
            rows.append(r_idx)
            cols.append(c_idx)
            bv.append(V.ravel())
            dv.append((dV / jac).ravel())
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        shape = (n_el * nq, self.n)
        self.B = sparse.csr_matrix((np.concatenate(bv), (rows, cols)), shape=shape)
        self.D = sparse.csr_matrix((np.concatenate(dv), (rows, cols)), shape=shape)
        self.nodes, self.rq, self.wq = nodes, rq, wq

        m = self.m
        powers = lambda coeffs, shift: sum(c * rq ** (shift + k) for k, c in enumerate(coeffs))
        self.A_eff = powers(co.A, m - 1)
        self.C_eff = powers(co.C, m - 1)
        self.M_eff = powers(co.M, m - 1)
        if np.any(self.M_eff <= 0) or np.any(self.C_eff <= 0):
            raise ChartExitError("volume element or weight not positive on the grid ball")
        self.coefficients = co
        self.wq_vol = wq * self.M_eff
        self.wq_a = wq * self.C_eff
        stiff = self.D.T @ sparse.diags(wq * self.A_eff) @ self.D
        mass_a = self.B.T @ sparse.diags(self.wq_a) @ self.B
        self.stiffness = stiff.tocsc()
        self.A = (stiff + self.model.h0 * mass_a).tocsc()
        self.mass = (self.B.T @ sparse.diags(self.wq_vol) @ self.B).tocsc()

    # interface -------------------------------------------------------------------

    @cached_property
    def node_weights(self) -> np.ndarray:
        return self.B.T @ self.wq_vol

    @property
    def quad_radii(self):
        return self.rq

    def to_quad(self, u):
        return self.B @ u

    def grad_quad(self, u):
        return self.D @ u

    def from_quad(self, f, w):
        return self.B.T @ (w * f)

    def apply_A(self, u):
        return self.A @ u

    @cached_property
    def _lu(self):
        return spla.splu(self.A)

    def __getstate__(self):
        # the sparse factorisation is not picklable; it is rebuilt on demand
        state = dict(self.__dict__)
        state.pop("_lu", None)
        return state

    def check_coercive(self):
        # with h = 0 constants lie in the kernel of the natural-boundary form
        if self.model.h0 <= 0:
            raise NonCoerciveError("the H form needs h > 0 on the truncated ball")
        try:
            np.linalg.cholesky(self.A.toarray())
        except np.linalg.LinAlgError:
            raise NonCoerciveError("discrete H form is not positive definite; check a and h") from None

    def solve_A(self, b):
        self.check_coercive_once()
        x = self._lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("adjoint solve produced non-finite values")
        return x

    def check_coercive_once(self):
        if not getattr(self, "_coercive", False):
            self.check_coercive()
            self._coercive = True

    def solve_mass(self, b):
        return spla.spsolve(self.mass, b)

    def gradient_dot(self, u):
        """``grad a . grad u`` at quadrature points for radial weights."""
        lam = self.model.a_hess[0, 0]
        return lam * self.rq * (self.D @ u)

    def nodes_per_delta(self) -> int:
        return int(np.count_nonzero(self.nodes <= self.delta + 1e-14))

    def cell_size(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    def evaluate(self, values, rho):
        """Evaluate the piecewise polynomial at the radii ``rho``."""
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        p = self.degree
        e = np.clip(np.searchsorted(self.edges, rho, side="right") - 1, 0, self.edges.size - 2)
        gll = gauss_lobatto(p)
        out = np.empty(rho.size)
        for el in np.unique(e):
            sel = e == el
            lo, hi = self.edges[el], self.edges[el + 1]
            V, _ = lagrange_matrices(gll, 2.0 * (rho[sel] - lo) / (hi - lo) - 1.0)
            out[sel] = V @ values[el * p:(el + 1) * p + 1]
        return out

    def describe(self) -> dict:
        return {"kind": self.kind, "m": self.m, "delta": self.delta, "nodes": self.n,
                "degree": self.degree, "elements": self.edges.size - 1, "radius": self.radius}


# periodic tensor grid -----------------------------------------------------------

class TensorGrid:
    """Uniform periodic grid on ``[-L, L)^m`` with Fourier derivatives.

    Curved models require the whole box inside the chart; the flat model is
    closed periodically (a torus).
    """

    kind = "tensor"

    def __init__(self, model: ManifoldModel, n: int, half_width: float = None, delta: float = None):
        self.model = model
        self.m = m = model.m
        self.shape = (int(n),) * m
        self.L = model.cutoff.radius if half_width is None else float(half_width)
        self.h = 2.0 * self.L / n
        self.delta = delta
        if not model.is_flat and math.sqrt(m) * self.L >= model.injectivity_radius:
            raise ChartExitError("tensor box leaves the chart of a curved model")
        ax = -self.L + self.h * np.arange(n)
        self.axes = ax
        self.points = np.stack(np.meshgrid(*([ax] * m), indexing="ij"), axis=-1).reshape(-1, m)
        k = np.fft.fftfreq(n, d=self.h) * 2 * math.pi
        if n % 2 == 0:
            k[n // 2] = 0.0
        self.k = k
        vol = self.h ** m
        if model.is_flat:
            self.ginv = None
            sqrtg = np.ones(self.points.shape[0])
        else:
            from .geometry import metric_inverse_at, sqrt_det_g
            self.ginv = metric_inverse_at(model, self.points)
            sqrtg = sqrt_det_g(model, self.points)
            if np.any(sqrtg <= 0):
                raise ChartExitError("volume element not positive on the tensor box")
        self.a_vals = model.a(self.points)
        self.wq_vol = vol * sqrtg
        self.wq_a = self.wq_vol * self.a_vals
        self.n = self.points.shape[0]

    def deriv(self, u, i):
        U = np.fft.fft(u.reshape(self.shape), axis=i)
        sh = [1] * self.m
        sh[i] = -1
        return np.real(np.fft.ifft(1j * self.k.reshape(sh) * U, axis=i)).ravel()

    def gradient(self, u):
        return np.stack([self.deriv(u, i) for i in range(self.m)], -1)

    def apply_A(self, u):
        grad = self.gradient(u)
        flux = grad if self.ginv is None else np.einsum("pij,pj->pi", self.ginv, grad)
        flux = flux * self.wq_a[:, None]
        out = self.model.h0 * self.wq_a * u
        for i in range(self.m):
            out -= self.deriv(flux[:, i], i)
        return out

    @property
    def node_weights(self):
        return self.wq_vol

    def to_quad(self, u):
        return u

    def from_quad(self, f, w):
        return w * f

    def _precondition(self, b):
        abar = float(np.mean(self.wq_a))
        K2 = sum(np.meshgrid(*([self.k ** 2] * self.m), indexing="ij"))
        return np.real(np.fft.ifftn(np.fft.fftn(b.reshape(self.shape)) / (abar * (K2 + max(self.model.h0, 1e-3))))).ravel()

    def solve_A(self, b, rtol: float = 1e-12):
        if self.model.h0 <= 0:
            raise NonCoerciveError("periodic H form needs h > 0")
        op = spla.LinearOperator((self.n, self.n), matvec=self.apply_A)
        pre = spla.LinearOperator((self.n, self.n), matvec=self._precondition)
        x, info = spla.cg(op, np.asarray(b, dtype=float), rtol=rtol, atol=0.0, M=pre, maxiter=2000)
        if info != 0:
            raise LinearSolveError(f"conjugate gradients did not converge (info={info})")
        return x

    def nodes_per_delta(self) -> int:
        return int(math.floor(self.delta / self.h)) if self.delta else 0

    def cell_size(self) -> float:
        return self.h

    def describe(self) -> dict:
        return {"kind": self.kind, "m": self.m, "n": self.shape[0], "half_width": self.L, "spacing": self.h}


# fields ------------------------------------------------------------------------------

class DiscreteField:
    """Nodal values on a chart grid with the grid's quadrature."""

    def __init__(self, values, grid):
        self.values = np.asarray(values, dtype=float)
        self.grid = grid
        if self.values.shape != (grid.n,):
            raise ValueError(f"field has {self.values.shape} values for a grid of {grid.n} nodes")

    @property
    def quadrature_weights(self):
        return self.grid.node_weights

    def integral(self) -> float:
        return float(self.quadrature_weights @ self.values)

    def inner_H(self, other) -> float:
        return float(self.values @ self.grid.apply_A(_vals(other)))

    def norm_H(self) -> float:
        return math.sqrt(max(self.inner_H(self), 0.0))

    def norm_Ls(self, s: float) -> float:
        q = np.abs(self.grid.to_quad(self.values))
        return float(np.sum(self.grid.wq_vol * q ** s) ** (1.0 / s))

    def norm(self, eps: float) -> float:
        """``||.||_H`` for eps > 0, ``||.||_H + |.|_{s_eps}`` for eps < 0."""
        if eps < 0:
            return self.norm_H() + self.norm_Ls(s_eps(self.grid.m, eps))
        return self.norm_H()

    def _wrap(self, v):
        return DiscreteField(v, self.grid)

    def __add__(self, o):
        return self._wrap(self.values + _vals(o))

    def __sub__(self, o):
        return self._wrap(self.values - _vals(o))

    def __mul__(self, c):
        return self._wrap(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.values)


def _vals(x):
    return x.values if isinstance(x, DiscreteField) else np.asarray(x, dtype=float)


def s_eps(m: int, eps: float) -> float:
    two_star = 2.0 * m / (m - 2.0)
    return two_star - 0.5 * m * eps if eps < 0 else two_star
