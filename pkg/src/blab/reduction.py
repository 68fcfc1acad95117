"""Discrete Lyapunov-Schmidt reduction around the bubble ansatz.

The equation ``u = i*(a f_eps(u))`` is split on ``K = span{Z^0..Z^m}`` and
its H-orthogonal complement.  The correction Phi in K-perp solves
``L Phi = N(Phi) + R`` with::

    L Phi = pi_perp(Phi - i*(a f'(W) Phi))
    N Phi = pi_perp i*(a [f(W+Phi) - f(W) - f'(W) Phi])
    R     = pi_perp(i*(a f(W)) - W)

and the reduced problem is a critical point of ``t -> J(W_t + Phi_t)``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import linalg as spla

from . import bubble
from .energy import (RegimeError, build_W, concentration_scale, critical_point, default_t_interval,
                     energy_exact, make_grid, nonlinearity, nonlinearity_prime, reduced_energy_fn,
                     regime_allows, theta)
from .geometry import ManifoldModel
from .grids import DiscreteField, angular_coefficients, s_eps

log = logging.getLogger(__name__)


class GramError(np.linalg.LinAlgError):
    """The kernel Gram matrix is numerically singular."""


class NonContractionError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


class NewtonError(RuntimeError):
    pass


class SymmetryError(ValueError):
    """The radial solver needs a rotation-invariant model and eta = 0."""


# pointwise ansatz (chart coordinates, cutoff at the origin) ---------------------------

def _scaled(model, eps, t, eta, y):
    m = model.m
    delta = concentration_scale(eps, t)
    eta = np.zeros(m) if eta is None else np.asarray(eta, dtype=float)
    y = np.asarray(y, dtype=float)
    z = y / delta - eta
    return delta, z, model.cutoff(np.linalg.norm(y, axis=-1)) * delta ** (-(m - 2.0) / 2.0)


def W_point(model: ManifoldModel, eps, t, eta, y):
    _, z, pre = _scaled(model, eps, t, eta, y)
    return pre * bubble.bubble_eval(model.m, z)


def Z_point(model: ManifoldModel, eps, t, eta, i, y):
    _, z, pre = _scaled(model, eps, t, eta, y)
    return pre * bubble.kernel_eval(model.m, i, z)


def dW_deta_point(model, eps, t, eta, k, y):
    """``dW/d eta_k = -Z^k`` (k = 1..m)."""
    return -Z_point(model, eps, t, eta, k, y)


def dW_dt_point(model, eps, t, eta, y):
    """``dW/dt = (Z^0 - sum_k eta_k Z^k) / (2t)``; equals ``Z^0/(2t)`` at eta = 0."""
    eta = np.zeros(model.m) if eta is None else np.asarray(eta, dtype=float)
    out = Z_point(model, eps, t, eta, 0, y)
    for k in range(1, model.m + 1):
        if eta[k - 1]:
            out = out - eta[k - 1] * Z_point(model, eps, t, eta, k, y)
    return out / (2.0 * t)


# fields ----------------------------------------------------------------------------------

def build_Z(model: ManifoldModel, eps: float, t: float, eta=None, i: int = 0, grid=None,
            **grid_kw) -> DiscreteField:
    """Cut-off rescaled kernel function ``chi delta^(-(m-2)/2) V_i(y/delta - eta)``."""
    m = model.m
    if not 0 <= i <= m:
        raise IndexError(f"kernel index {i} outside 0..{m}")
    W = build_W(model, eps, t, eta, grid=grid, **grid_kw)
    grid = W.grid
    delta = concentration_scale(eps, t)
    scale = delta ** (-(m - 2.0) / 2.0)
    if grid.kind == "radial":
        if i != 0:
            raise SymmetryError("translation modes are not radial; use a tensor grid")
        vals = model.cutoff(grid.nodes) * scale * bubble.kernel0_profile(m, grid.nodes / delta)
    else:
        y = grid.points
        eta_v = np.zeros(m) if eta is None else np.asarray(eta, dtype=float)
        vals = model.cutoff(np.linalg.norm(y, axis=-1)) * scale * bubble.kernel_eval(m, i, y / delta - eta_v)
    return DiscreteField(vals, grid)


def adjoint_apply(model: ManifoldModel, v: DiscreteField) -> DiscreteField:
    """``u = i*_H(v)``: ``<u, phi>_H = int v phi dmu_g`` for all grid functions phi."""
    grid = v.grid
    if not np.all(np.isfinite(v.values)):
        raise ValueError("adjoint_apply needs a finite field")
    b = grid.from_quad(grid.to_quad(v.values), grid.wq_vol)
    return DiscreteField(grid.solve_A(b), grid)


def adjoint_weighted(grid, fq):
    """``i*_H(a f)`` for f given at quadrature points."""
    return grid.solve_A(grid.from_quad(fq, grid.wq_a))


class KernelProjector:
    """H-orthogonal projection onto the complement of span{Z}."""

    def __init__(self, grid, Z, max_condition: float = 1e12):
        self.grid = grid
        self.Z = np.stack([_values(z) for z in Z], axis=1)
        self.AZ = np.stack([grid.apply_A(self.Z[:, j]) for j in range(self.Z.shape[1])], axis=1)
        self.gram = self.Z.T @ self.AZ
        cond = np.linalg.cond(self.gram)
        if not np.isfinite(cond) or cond > max_condition:
            raise GramError(f"kernel Gram matrix condition {cond:.3g}; grid under-resolves the kernel")
        self.gram_condition = float(cond)

    def coefficients(self, f):
        return np.linalg.solve(self.gram, self.AZ.T @ _values(f))

    def __call__(self, f):
        f = _values(f)
        return f - self.Z @ self.coefficients(f)


def _diagonal(grid):
    if grid.kind == "radial":
        return grid.A.diagonal()
    e = np.zeros(grid.n)
    e[0] = 1.0
    return np.full(grid.n, grid.apply_A(e)[0])


def _values(f):
    return f.values if isinstance(f, DiscreteField) else np.asarray(f, dtype=float)


def project_perp(projector: KernelProjector, f: DiscreteField) -> DiscreteField:
    return DiscreteField(projector(f), projector.grid)


# correction fixed point ---------------------------------------------------------------------

@dataclass
class LSState:
    eps: float
    t: float
    eta: np.ndarray
    correction: DiscreteField
    multipliers: np.ndarray
    residual_H: float
    iterations: int
    ansatz: DiscreteField = None
    contraction_ratios: list = field(default_factory=list)
    correction_norm: float = 0.0
    R_norm: float = 0.0
    energy: float = None
    gmres_iterations: int = 0

    @property
    def solution(self) -> DiscreteField:
        return self.ansatz + self.correction

    @property
    def max_contraction(self) -> float:
        return max(self.contraction_ratios) if self.contraction_ratios else 0.0

    def summary(self) -> dict:
        return {"eps": self.eps, "t": self.t, "eta": np.asarray(self.eta).tolist(),
                "iterations": self.iterations, "residual_H": self.residual_H,
                "multipliers": np.asarray(self.multipliers).tolist(),
                "contraction_ratios": list(self.contraction_ratios),
                "correction_norm": self.correction_norm, "R_norm": self.R_norm,
                "energy": self.energy}


def require_radial(model: ManifoldModel, eta=None):
    if eta is not None and np.any(eta):
        raise SymmetryError("the radial solver is restricted to eta = 0")
    if not model.is_radially_symmetric():
        raise SymmetryError("the radial solver needs a rotation-invariant model")


def correction_fixed_point(model: ManifoldModel, eps: float, t: float, eta=None, *, grid=None,
                           max_iter: int = 50, tol: float = 1e-11, gmres_tol: float = 1e-12,
                           coefficients=None, **grid_kw) -> LSState:
    """Solve for the correction by ``Phi_{n+1} = L^-1 (N(Phi_n) + R)``.

    ``tol`` is relative: iteration stops once
    ``||Phi_{n+1} - Phi_n|| <= tol ||W||_H`` in the norm of ``H_eps``.
    """
    m = model.m
    eta = np.zeros(m) if eta is None else np.asarray(eta, dtype=float)
    if grid is None:
        require_radial(model, eta)
        grid = make_grid(model, eps, t, None, coefficients=coefficients, **grid_kw)
    W = build_W(model, eps, t, eta, grid=grid)
    indices = [0] if grid.kind == "radial" else list(range(m + 1))
    Z = [build_Z(model, eps, t, eta, i, grid=grid) for i in indices]
    proj = KernelProjector(grid, Z)
    n = grid.n
    Wq = grid.to_quad(W.values)
    fW = nonlinearity(Wq, eps, m)
    fpW = nonlinearity_prime(Wq, eps, m)

    R = proj(adjoint_weighted(grid, fW) - W.values)
    apply_L = lambda x: proj(x - adjoint_weighted(grid, fpW * grid.to_quad(x)))
    # Krylov in scaled variables y = S x with S^2 = diag(A), so the Euclidean
    # residual tracks the H norm on strongly graded meshes
    S = np.sqrt(np.abs(_diagonal(grid)))
    L = spla.LinearOperator((n, n), matvec=lambda y: S * apply_L(y / S))
    gmres_its = [0]

    def solve_L(b):
        def count(_):
            gmres_its[0] += 1
        y, info = spla.gmres(L, S * b, rtol=gmres_tol, atol=0.0, restart=n, maxiter=10,
                             callback=count, callback_type="pr_norm")
        if info != 0:
            raise ConvergenceError(f"GMRES on K-perp did not converge (info={info})")
        return proj(y / S)

    def N(phi):
        uq = Wq + grid.to_quad(phi)
        return proj(adjoint_weighted(grid, nonlinearity(uq, eps, m) - fW - fpW * grid.to_quad(phi)))

    def norm(v):
        return DiscreteField(v, grid).norm(eps)

    scale = W.norm_H()
    phi = np.zeros(n)
    diffs, ratios = [], []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = solve_L(N(phi) + R)
        d = norm(new - phi)
        if diffs and diffs[-1] > 0:
            ratios.append(d / diffs[-1])
            if len(ratios) >= 2 and ratios[-1] >= 1.0 and ratios[-2] >= 1.0:
                raise NonContractionError(
                    f"fixed-point map is not contracting (ratios {ratios[-2]:.3g}, {ratios[-1]:.3g}); eps too large")
        diffs.append(d)
        log.debug("iteration %d: step %.3e (relative %.3e)", it, d, d / scale)
        phi = new
        if d <= tol * scale:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"correction did not converge in {max_iter} iterations")

    u = W.values + phi
    uq = grid.to_quad(u)
    r = u - adjoint_weighted(grid, nonlinearity(uq, eps, m))
    lam_sub = proj.coefficients(r)
    lam = np.zeros(m + 1)
    lam[indices] = lam_sub
    res = DiscreteField(proj(r), grid).norm_H()
    corr = DiscreteField(phi, grid)
    state = LSState(eps, t, eta, corr, lam, res, it, W, ratios, corr.norm(eps),
                    DiscreteField(R, grid).norm(eps), gmres_iterations=gmres_its[0])
    state.energy = energy_exact(model, eps, state.solution)
    log.debug("fixed point eps=%g t=%g: %d iterations, residual %.3g", eps, t, it, res)
    return state


# reduced problem ------------------------------------------------------------------------

@dataclass
class ReducedSolution:
    eps: float
    t_eps: float
    eta_eps: np.ndarray
    state: LSState
    t0: float
    t_interval: tuple
    newton_history: list
    gradient: float
    runtime: float

    @property
    def solution(self) -> DiscreteField:
        return self.state.solution

    @property
    def relative_t_error(self) -> float:
        return abs(self.t_eps - self.t0) / self.t0

    def manifest(self) -> dict:
        return {"eps": self.eps, "t_eps": self.t_eps, "eta_eps": np.asarray(self.eta_eps).tolist(),
                "t0": self.t0, "t_interval": list(self.t_interval), "gradient": self.gradient,
                "newton": self.newton_history, "state": self.state.summary(),
                "grid": self.state.ansatz.grid.describe()}


def reduced_energy(model, eps, t, coefficients=None, **kw) -> float:
    return correction_fixed_point(model, eps, t, coefficients=coefficients, **kw).energy


def reduced_solve(model: ManifoldModel, eps: float, *, t_interval=None, newton_tol: float = 1e-5,
                  t_start=None, fd_step: float = 1e-4, hess_step: float = 1e-3, max_newton: int = 30,
                  convention: str = "stated", grid_kw=None, fp_kw=None) -> ReducedSolution:
    """Newton on the finite-difference derivative of ``t -> J(W_t + Phi_t)``.

    For rotation-invariant models the reduced variable eta is fixed at 0 by
    symmetry.  ``newton_tol`` bounds ``t |dJ/dt| / (a0 d_m |eps|)``, the
    gradient measured in units of the reduced function.
    """
    start = time.perf_counter()
    sign = 1 if eps > 0 else -1
    th = theta(model, convention)
    if not regime_allows(th, sign):
        raise RegimeError(
            f"regime mismatch: Theta={th:.6g} with eps={eps:+.3g}; eps > 0 requires Theta > 0 "
            "and eps < 0 requires Theta < 0")
    require_radial(model)
    fn = reduced_energy_fn(model, sign, convention)
    t0 = critical_point(fn).t0
    lo, hi = default_t_interval(fn) if t_interval is None else t_interval
    grid_kw = dict(grid_kw or {})
    fp_kw = dict(fp_kw or {})
    co = angular_coefficients(model)
    from .energy import closed_form_coeffs
    unit = model.a0 * closed_form_coeffs(model.m).d_m * abs(eps)

    def J(t):
        if not lo <= t <= hi:
            raise NewtonError(f"Newton left the admissible interval [{lo:.4g}, {hi:.4g}] (t={t:.4g})")
        return correction_fixed_point(model, eps, t, coefficients=co, **grid_kw, **fp_kw).energy

    t = t0 if t_start is None else float(t_start)
    t = min(max(t, lo * 1.01), hi / 1.01)
    history = []
    g_scaled = math.inf
    for _ in range(max_newton):
        h1, h2 = fd_step * t, hess_step * t
        jp, jm = J(t + h1), J(t - h1)
        g = (jp - jm) / (2 * h1)
        j0 = J(t)
        H = (J(t + h2) - 2 * j0 + J(t - h2)) / (h2 * h2)
        g_scaled = t * abs(g) / unit
        history.append({"t": t, "dJ": g, "d2J": H, "scaled_gradient": g_scaled})
        if g_scaled < newton_tol:
            break
        if not sign * H > 0:
            raise NewtonError(f"reduced energy has no usable curvature at t={t:.4g}")
        step = -g / H
        step = max(min(step, 0.5 * t), -0.5 * t)
        t = min(max(t + step, lo * 1.001), hi / 1.001)
    else:
        raise NewtonError(f"Newton did not reach tolerance {newton_tol} (scaled gradient {g_scaled:.3g})")
    state = correction_fixed_point(model, eps, t, coefficients=co, **grid_kw, **fp_kw)
    return ReducedSolution(eps, t, np.zeros(model.m), state, t0, (lo, hi), history, g_scaled,
                           time.perf_counter() - start)


# verification --------------------------------------------------------------------------------

@dataclass
class ResidualReport:
    residual: float
    argmax_radius: float
    cell_size: float
    width: float
    width_ratio: float
    minimum_on_support: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def interpolate_radial(field: DiscreteField, grid) -> DiscreteField:
    return DiscreteField(field.grid.evaluate(field.values, grid.nodes), grid)


def _dual_norm(grid, s):
    if grid.kind == "radial":
        return math.sqrt(max(float(s @ grid.solve_mass(s)), 0.0))
    return math.sqrt(float(np.sum(s * s / grid.wq_vol)))


def verify_solution(model: ManifoldModel, eps: float, u: DiscreteField, reference_grid=None) -> ResidualReport:
    """Strong-form residual of the equation in the discrete dual norm.

    The residual ``A u - (a f_eps(u), .)`` is measured in the norm dual to
    L^2(dmu_g) and divided by the same norm of the nonlinear term.  With
    ``reference_grid`` the field is first interpolated onto that grid.
    """
    m = model.m
    if reference_grid is not None:
        u = interpolate_radial(u, reference_grid)
    grid = u.grid
    uq = grid.to_quad(u.values)
    load = grid.from_quad(nonlinearity(uq, eps, m), grid.wq_a)
    s = grid.apply_A(u.values) - load
    denom = _dual_norm(grid, load)
    res = 0.0 if denom == 0.0 else _dual_norm(grid, s) / denom
    vals = u.values
    if grid.kind == "radial":
        radii = grid.nodes
    else:
        radii = np.linalg.norm(grid.points, axis=-1)
    imax = int(np.argmax(vals))
    peak = vals[imax]
    width = math.nan
    if peak > 0 and grid.kind == "radial":
        above = np.nonzero(vals < 0.5 * peak)[0]
        if above.size:
            j = above[0]
            r_half = _bisect_half(grid, vals, 0.5 * peak, grid.nodes[j - 1], grid.nodes[j])
            width = r_half / math.sqrt(2.0 ** (2.0 / (m - 2.0)) - 1.0)
    support = radii < 0.5 * model.cutoff.radius
    return ResidualReport(res, float(radii[imax]), grid.cell_size(), width, width / math.sqrt(abs(eps)),
                          float(np.min(vals[support])) if np.any(support) else math.nan)


def _bisect_half(grid, vals, level, a, b):
    for _ in range(60):
        c = 0.5 * (a + b)
        if grid.evaluate(vals, c)[0] > level:
            a = c
        else:
            b = c
    return 0.5 * (a + b)


REFINEMENT_LEVELS = ({"degree": 6, "inner_elements": 16}, {"degree": 8, "inner_elements": 24},
                     {"degree": 10, "inner_elements": 32})
REFERENCE_GRID = {"degree": 14, "inner_elements": 64, "outer_elements": 8}


def residual_refinement(model: ManifoldModel, eps: float, t: float, levels=REFINEMENT_LEVELS,
                        reference=REFERENCE_GRID) -> list:
    """Residuals of the fixed point at ``t`` on successively finer grids.

    Each solution is interpolated onto one common reference grid before
    the residual is measured, so the sequence isolates discretisation error.
    """
    ref = make_grid(model, eps, t, **reference)
    out = []
    for kw in levels:
        state = correction_fixed_point(model, eps, t, **kw)
        out.append(verify_solution(model, eps, state.solution, reference_grid=ref).residual)
    return out


# diagnostics ------------------------------------------------------------------------------------

def weighted_gradient_norm(model: ManifoldModel, W: DiscreteField, eps: float) -> float:
    """``|| grad a . grad W ||_q`` with ``q = m s / (m + 2 s)``, ``s = s_eps``."""
    grid = W.grid
    m = model.m
    s = s_eps(m, eps)
    q = m * s / (m + 2.0 * s)
    if grid.kind == "radial":
        require_radial(model)
        vals = grid.gradient_dot(W.values)
    else:
        vals = np.einsum("pi,pi->p", model.grad_a(grid.points), grid.gradient(W.values))
    return float(np.sum(grid.wq_vol * np.abs(vals) ** q) ** (1.0 / q))


def loglog_slope(x, y) -> float:
    x, y = np.abs(np.asarray(x, dtype=float)), np.abs(np.asarray(y, dtype=float))
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass
class LadderRun:
    eps: list
    states: list
    solutions: list
    runtime: float

    def multiplier_sums(self):
        return [float(np.sum(np.abs(s.multipliers))) for s in self.states]

    def multiplier_exponent(self) -> float:
        return loglog_slope(self.eps, self.multiplier_sums())


def multiplier_ladder(model: ManifoldModel, ladder, t: float, **kw) -> LadderRun:
    """Fixed-point states at one fixed t across an eps ladder."""
    start = time.perf_counter()
    co = angular_coefficients(model)
    states = [correction_fixed_point(model, e, t, coefficients=co, **kw) for e in ladder]
    return LadderRun(list(ladder), states, [], time.perf_counter() - start)


def dumps_manifest(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float)
