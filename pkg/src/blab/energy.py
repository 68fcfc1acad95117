"""Energy of the bubble ansatz, the reduced function and the geometric threshold.

Conventions.  With ``delta = sqrt(|eps| t)`` the energy of the ansatz behaves
like ``a(xi_0) [a_m - b_m eps log|eps| + c_m eps + d_m |eps| Phi(t, eta)]``
with::

    Phi(t, eta) = (C_m Theta + 1/2 eta.(D^2 a/a) eta) t - sign(eps) (m-2)^2/8 log t
    C_m         = 2(m-1) / ((m-2)(m-4))
    Theta       = h - (m-2)/(4(m-1)) S_g + kappa_m Delta a / a

``kappa_m`` is ``3(m-2)/(2(m-1))`` in the ``"stated"`` convention.  Direct
evaluation of the bubble moments gives half of that, ``3(m-2)/(4(m-1))``,
available as the ``"corrected"`` convention; the difference is measured by
the expansion fits.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bubble
from .bubble import BubbleMoments, DimensionError, MomentCheck, check_dimension, critical_exponent
from .geometry import ManifoldModel, scalar_curvature
from .grids import DiscreteField, RadialGrid, ResolutionError

CONVENTIONS = ("stated", "corrected")


class RegimeError(ValueError):
    """Sign of Theta incompatible with the sign of eps: no critical t > 0."""


class DegenerateThresholdError(RegimeError):
    """Theta vanishes, so Phi has no nondegenerate critical point."""


class NotCriticalError(ValueError):
    """The weight gradient does not vanish at xi_0."""


class QuadratureFailure(FloatingPointError):
    pass


# constants -------------------------------------------------------------------------

def linear_coefficient(m: int) -> float:
    """``C_m = 2(m-1)/((m-2)(m-4))``, the coefficient of h t in Phi."""
    m = check_dimension(m, 5)
    return 2.0 * (m - 1.0) / ((m - 2.0) * (m - 4.0))


def curvature_coefficient(m: int) -> float:
    return (m - 2.0) / (4.0 * (m - 1.0))


def weight_coefficient(m: int, convention: str = "stated") -> float:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    base = 3.0 * (m - 2.0) / (m - 1.0)
    return base / 2.0 if convention == "stated" else base / 4.0


def log_coefficient(m: int) -> float:
    return (m - 2.0) ** 2 / 8.0


@dataclass(frozen=True)
class ExpansionCoeffs:
    """Expansion constants per unit ``a(xi_0)``; c_m is only known from fits."""

    a_m: float
    b_m: float
    d_m: float
    c_m: float = None

    @property
    def log_ratio(self) -> float:
        return self.b_m / self.d_m


def closed_form_coeffs(m: int) -> ExpansionCoeffs:
    m = check_dimension(m, 5)
    S = bubble.sphere_constants(m).K_m ** (-m)
    d = S / m
    return ExpansionCoeffs(a_m=S / m, b_m=log_coefficient(m) * d, d_m=d)


# threshold and reduced function -------------------------------------------------------

def theta(model: ManifoldModel, convention: str = "stated") -> float:
    """Geometric threshold whose sign selects the admissible sign of eps."""
    if not model.is_critical:
        raise NotCriticalError("xi_0 is not a critical point of a (a_grad != 0)")
    m = model.m
    return (model.h0 - curvature_coefficient(m) * scalar_curvature(model)
            + weight_coefficient(m, convention) * model.laplacian_a() / model.a0)


@dataclass(frozen=True)
class ReducedEnergyFn:
    m: int
    theta: float
    a_hess_normalized: np.ndarray
    sign_eps: int

    def __post_init__(self):
        check_dimension(self.m, 5)
        if self.sign_eps not in (-1, 1):
            raise ValueError("sign_eps must be +1 or -1")
        A = np.asarray(self.a_hess_normalized, dtype=float)
        if A.shape != (self.m, self.m):
            raise ValueError("a_hess_normalized has the wrong shape")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        object.__setattr__(self, "a_hess_normalized", A)

    @property
    def slope(self) -> float:
        return linear_coefficient(self.m) * self.theta


def reduced_energy_fn(model: ManifoldModel, sign_eps: int, convention: str = "stated") -> ReducedEnergyFn:
    return ReducedEnergyFn(model.m, theta(model, convention), model.a_hess / model.a0, int(sign_eps))


def _check_t(t):
    if not t > 0:
        raise ValueError(f"Phi is defined for t > 0, got t={t}")


def phi_eval(fn: ReducedEnergyFn, t: float, eta) -> float:
    _check_t(t)
    eta = np.asarray(eta, dtype=float)
    quad = 0.5 * eta @ fn.a_hess_normalized @ eta
    return (fn.slope + quad) * t - fn.sign_eps * log_coefficient(fn.m) * math.log(t)


def phi_grad(fn: ReducedEnergyFn, t: float, eta) -> np.ndarray:
    _check_t(t)
    eta = np.asarray(eta, dtype=float)
    dt = fn.slope + 0.5 * eta @ fn.a_hess_normalized @ eta - fn.sign_eps * log_coefficient(fn.m) / t
    return np.concatenate([[dt], t * fn.a_hess_normalized @ eta])


def phi_hessian(fn: ReducedEnergyFn, t: float, eta) -> np.ndarray:
    _check_t(t)
    eta = np.asarray(eta, dtype=float)
    m = fn.m
    H = np.zeros((m + 1, m + 1))
    H[0, 0] = fn.sign_eps * log_coefficient(m) / (t * t)
    H[0, 1:] = H[1:, 0] = fn.a_hess_normalized @ eta
    H[1:, 1:] = t * fn.a_hess_normalized
    return H


def regime_allows(theta_value: float, sign_eps: int) -> bool:
    """Solve (True) or refuse (False): eps > 0 needs Theta > 0, eps < 0 needs Theta < 0."""
    return theta_value * sign_eps > 0


@dataclass(frozen=True)
class CriticalPoint:
    t0: float
    eta0: np.ndarray
    nondegenerate: bool


def critical_point(fn: ReducedEnergyFn) -> CriticalPoint:
    m = fn.m
    if fn.theta == 0.0:
        raise DegenerateThresholdError("Theta = 0: Phi is degenerate in t")
    if not regime_allows(fn.theta, fn.sign_eps):
        raise RegimeError(
            f"no critical point with t > 0: Theta={fn.theta:.6g} with sign(eps)={fn.sign_eps:+d}; "
            "eps > 0 requires Theta > 0 and eps < 0 requires Theta < 0")
    eta0 = np.zeros(m)
    t = fn.sign_eps * log_coefficient(m) / fn.slope
    for _ in range(5):
        g = phi_grad(fn, t, eta0)[0]
        t -= g / phi_hessian(fn, t, eta0)[0, 0]
        if abs(g) <= 1e-15 * max(1.0, abs(fn.slope)):
            break
    d2 = phi_hessian(fn, t, eta0)[0, 0]
    nondeg = bool(d2 != 0.0 and abs(np.linalg.det(fn.a_hess_normalized)) > 1e-300)
    return CriticalPoint(t, eta0, nondeg)


def default_t_interval(fn: ReducedEnergyFn = None):
    try:
        t0 = critical_point(fn).t0 if fn is not None else None
    except RegimeError:
        t0 = None
    return (0.25, 4.0) if t0 is None else (t0 / 4.0, 4.0 * t0)


# identity locks --------------------------------------------------------------------------

def identity_locks(m: int, tol: float = 1e-9, method: str = "quad"):
    """Bubble-moment identities behind the reduced function.

    ``lock_A`` compares against the closed form ``3 K^-m / (m(m-4))``;
    ``lock_A_half`` records the value ``3 K^-m / (2m(m-4))`` that the
    moments actually produce.
    """
    m = check_dimension(m)
    if m < 5:
        raise DimensionError("the weighted moments need m >= 5")
    bm = BubbleMoments(m, method)
    S = bubble.sphere_constants(m).K_m ** (-m)
    grad = bm.grad_sq()
    crit = bm.crit_power()
    grad_z2 = bm.grad_sq(1)
    crit_z2 = bm.crit_power(1)
    # int (U'/|z|)^2 z_i^2 = int |grad U|^2 / m by isotropy
    bracket_terms = [(m - 2.0) / (8.0 * m) * crit, 0.25 * grad / m, -0.125 * grad]
    bracket = sum(bracket_terms)
    lock_a = grad_z2 / (4.0 * m) - (m - 2.0) / (4.0 * m * m) * crit_z2
    lock_b = 0.25 * grad - (m - 2.0) / (4.0 * m) * crit
    return [
        MomentCheck("eta_bracket", bracket, 0.0, tol, scale=max(abs(x) for x in bracket_terms)),
        MomentCheck("lock_A", lock_a, 3.0 * S / (m * (m - 4.0)), tol),
        MomentCheck("lock_A_half", lock_a, 3.0 * S / (2.0 * m * (m - 4.0)), tol),
        MomentCheck("lock_B", lock_b, S / (2.0 * m), tol),
    ]


# ansatz on grids --------------------------------------------------------------------------

def nonlinearity(u, eps: float, m: int):
    """``f(u) = (u+)^(2*-1-eps)``."""
    return np.maximum(u, 0.0) ** (critical_exponent(m) - 1.0 - eps)


def nonlinearity_prime(u, eps: float, m: int):
    p = critical_exponent(m) - 1.0 - eps
    return p * np.maximum(u, 0.0) ** (p - 1.0)


def primitive(u, eps: float, m: int):
    q = critical_exponent(m) - eps
    return np.maximum(u, 0.0) ** q / q


def concentration_scale(eps: float, t: float) -> float:
    return bubble.BubbleParams.from_eps(eps, t).delta


def make_grid(model: ManifoldModel, eps: float, t: float, eta=None, **grid_kw):
    delta = concentration_scale(eps, t)
    center = None if eta is None else delta * np.asarray(eta, dtype=float)
    return RadialGrid(model, delta, center, **grid_kw)


def check_resolution(grid, delta: float, minimum: int = 8):
    if grid.kind == "radial":
        n = grid.nodes_per_delta()
    else:
        n = int(math.floor(delta / grid.cell_size() + 1e-12))
    if n < minimum:
        raise ResolutionError(f"grid resolves delta={delta:.3g} with {n} nodes, need {minimum}")


def _profile_values(model, grid, delta, center, profile):
    m = model.m
    scale = delta ** (-(m - 2.0) / 2.0)
    if grid.kind == "radial":
        rho = grid.nodes
        return model.cutoff(rho) * scale * profile(rho / delta)
    y = grid.points
    return model.cutoff(np.linalg.norm(y, axis=-1)) * scale * profile((y - center) / delta)


def build_W(model: ManifoldModel, eps: float, t: float, eta=None, grid=None, t_interval=None,
            **grid_kw) -> DiscreteField:
    """Cut-off rescaled bubble on a chart grid.

    On a radial grid the cutoff is centred at the bubble centre (the grid
    centre); on a tensor grid it is centred at the chart origin.
    """
    if eps == 0:
        raise ValueError("eps must be nonzero")
    if t_interval is not None and not (t_interval[0] <= t <= t_interval[1]):
        raise ValueError(f"t={t} outside the admissible interval {tuple(t_interval)}")
    delta = concentration_scale(eps, t)
    eta = np.zeros(model.m) if eta is None else np.asarray(eta, dtype=float)
    if grid is None:
        grid = make_grid(model, eps, t, eta, **grid_kw)
    check_resolution(grid, delta)
    m = model.m
    if grid.kind == "radial":
        vals = _profile_values(model, grid, delta, None, lambda r: bubble.profile(m, r))
    else:
        vals = _profile_values(model, grid, delta, delta * eta, lambda z: bubble.bubble_eval(m, z))
    return DiscreteField(vals, grid)


def energy_exact(model: ManifoldModel, eps: float, W) -> float:
    """``1/2 <W, W>_H - 1/(2*-eps) int a (W+)^(2*-eps)`` by chart quadrature."""
    u = W.values
    grid = W.grid
    quad = grid.to_quad(u)
    val = 0.5 * float(u @ grid.apply_A(u)) - float(np.sum(grid.wq_a * primitive(quad, eps, model.m)))
    if not math.isfinite(val):
        raise QuadratureFailure("energy quadrature is not finite")
    return val


# expansion fits ------------------------------------------------------------------------

def eps_ladder(k_min: int = 6, k_max: int = 14, step: float = 1.0, signs=(1, -1)):
    """Geometric ladder ``sign * 2^-k``, strictly decreasing in |eps| per sign."""
    ks = np.arange(k_min, k_max + 0.5 * step, step)
    return [s * 2.0 ** (-k) for s in signs for k in ks]


def _energy_job(args):
    model, eps, t, eta, grid_kw = args
    W = build_W(model, eps, t, eta, **grid_kw)
    return energy_exact(model, eps, W)


def ladder_energies(model, t, eta, ladder, grid_kw=None, workers: int = 1):
    jobs = [(model, float(e), t, eta, dict(grid_kw or {})) for e in ladder]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return np.array(list(pool.map(_energy_job, jobs)))
    return np.array([_energy_job(j) for j in jobs])


@dataclass
class ExpansionReport:
    """Ladder energies and the fitted expansion constants."""

    m: int
    t: float
    eta: list
    a0: float
    eps: np.ndarray
    energies: np.ndarray
    fitted: np.ndarray
    coefficients: dict
    residual_rms: float
    truncation_ratios: list = field(default_factory=list)

    @property
    def a_m(self) -> float:
        return self.coefficients["const"] / self.a0

    @property
    def b_m(self) -> float:
        return -self.coefficients["eps_log"] / self.a0

    @property
    def eps_coefficient(self) -> float:
        return self.coefficients["eps"] / self.a0

    @property
    def abs_coefficient(self) -> float:
        return self.coefficients["abs_eps"] / self.a0

    def phi_coefficient(self, sign: int) -> float:
        """Coefficient of |eps| for one sign, with c_m still included."""
        return self.abs_coefficient + sign * self.eps_coefficient

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "J_exact", "fit_residual"])
        for e, j, f in zip(self.eps, self.energies, self.fitted):
            w.writerow([repr(float(e)), repr(float(j)), repr(float(j - f))])
        return buf.getvalue()

    def summary(self, checks=None) -> dict:
        out = {"m": self.m, "t": self.t, "eta": self.eta, "a0": self.a0,
               "coefficients": {k: float(v) for k, v in self.coefficients.items()},
               "a_m": self.a_m, "b_m": self.b_m, "residual_rms": self.residual_rms,
               "truncation_ratios": self.truncation_ratios}
        if checks is not None:
            out["checks"] = checks
        return out

    def to_json(self, checks=None) -> str:
        return json.dumps(self.summary(checks), indent=2, sort_keys=True)


def expansion_fit(model: ManifoldModel, t: float, eta=None, ladder=None, *, grid_kw=None,
                  workers: int = 1, estimator=None) -> ExpansionReport:
    """Fit ladder energies against ``{1, eps log|eps|, eps, |eps|}`` plus nuisance terms."""
    from .expansion import AsymptoticExpansionRegressor

    ladder = eps_ladder() if ladder is None else list(ladder)
    eta = np.zeros(model.m) if eta is None else np.asarray(eta, dtype=float)
    eps = np.asarray(ladder, dtype=float)
    J = ladder_energies(model, t, eta, eps, grid_kw, workers)
    est = AsymptoticExpansionRegressor() if estimator is None else estimator
    est.fit(eps, J)
    fitted = est.predict(eps)
    return ExpansionReport(model.m, float(t), eta.tolist(), model.a0, eps, J, fitted,
                           est.named_coefficients(), float(np.sqrt(np.mean((J - fitted) ** 2))),
                           est.truncation_ratios(eps, J))


@dataclass
class HShiftResult:
    dh: float
    delta_abs_coefficient: float
    predicted: float
    d_m: float
    base: ExpansionReport
    shifted: ExpansionReport

    @property
    def relative_error(self) -> float:
        return abs(self.delta_abs_coefficient - self.predicted) / abs(self.predicted)

    @property
    def log_ratio(self) -> float:
        """Fitted ``b_m / d_m``."""
        return self.base.b_m / self.d_m


def h_shift_test(model: ManifoldModel, t: float, ladder=None, dh: float = 1.0, **kw) -> HShiftResult:
    """Shift h by dh and read d_m off the change of the |eps| coefficient."""
    base = expansion_fit(model, t, None, ladder, **kw)
    shifted = expansion_fit(model.with_changes(h0=model.h0 + dh), t, None, ladder, **kw)
    m = model.m
    delta = shifted.abs_coefficient - base.abs_coefficient
    C = linear_coefficient(m)
    predicted = closed_form_coeffs(m).d_m * C * t * dh
    return HShiftResult(dh, delta, predicted, delta / (C * t * dh), base, shifted)
