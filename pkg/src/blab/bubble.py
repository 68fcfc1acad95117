"""Closed-form calculus for the standard bubble and its radial moments.

The standard bubble on R^m is ``U(z) = alpha_m (1 + |z|^2)^(-(m-2)/2)`` with
``alpha_m = (m(m-2))^((m-2)/4)``; it solves ``-Delta U = U^(2*-1)`` where
``2* = 2m/(m-2)``.  Everything here is evaluated analytically; quadrature
only enters through the independent checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .quadrature import radial_integral, sphere_area, sphere_monomial


class DimensionError(ValueError):
    """Raised when an operation is called outside its admissible dimensions."""


class DivergentMomentError(ValueError):
    pass


def check_dimension(m, minimum: int = 3) -> int:
    if int(m) != m:
        raise DimensionError(f"dimension must be an integer, got {m!r}")
    m = int(m)
    if m < minimum:
        raise DimensionError(f"dimension m={m} below the required minimum {minimum}")
    return m


def critical_exponent(m: int) -> float:
    m = check_dimension(m)
    return 2.0 * m / (m - 2.0)


def alpha(m: int) -> float:
    m = check_dimension(m)
    return (m * (m - 2.0)) ** ((m - 2.0) / 4.0)


# radial profile ------------------------------------------------------------

def profile(m: int, r):
    r = np.asarray(r, dtype=float)
    return alpha(m) * (1.0 + r * r) ** (-(m - 2.0) / 2.0)


def profile_dr_over_r(m: int, r):
    """U'(r)/r, analytic at r = 0."""
    r = np.asarray(r, dtype=float)
    return -alpha(m) * (m - 2.0) * (1.0 + r * r) ** (-m / 2.0)


def profile_dr(m: int, r):
    return np.asarray(r, dtype=float) * profile_dr_over_r(m, r)


def profile_d2(m: int, r):
    r = np.asarray(r, dtype=float)
    s = 1.0 + r * r
    return -alpha(m) * (m - 2.0) * (s ** (-m / 2.0) - m * r * r * s ** (-m / 2.0 - 1.0))


def profile_laplacian(m: int, r):
    """Delta U = U'' + (m-1) U'/r with the removable singularity resolved."""
    return profile_d2(m, r) + (m - 1.0) * profile_dr_over_r(m, r)


def kernel0_profile(m: int, r):
    """Radial profile of V_0 = -((m-2)/2) U - z . grad U."""
    r = np.asarray(r, dtype=float)
    return 0.5 * alpha(m) * (m - 2.0) * (r * r - 1.0) * (1.0 + r * r) ** (-m / 2.0)


def kernel0_dr(m: int, r):
    r = np.asarray(r, dtype=float)
    s = 1.0 + r * r
    c = 0.5 * alpha(m) * (m - 2.0)
    return c * r * (2.0 * s ** (-m / 2.0) - m * (r * r - 1.0) * s ** (-m / 2.0 - 1.0))


def kernel0_laplacian(m: int, r):
    r = np.asarray(r, dtype=float)
    s = 1.0 + r * r
    c = 0.5 * alpha(m) * (m - 2.0)
    # V0 = c (s - 2) s^(-m/2) = c (s^(1-m/2) - 2 s^(-m/2)); for f(s) the radial
    # Laplacian is 4 r^2 f'' + 2 m f'
    def lap(power, coef):
        d1 = power * s ** (power - 1.0)
        d2 = power * (power - 1.0) * s ** (power - 2.0)
        return coef * (4.0 * r * r * d2 + 2.0 * m * d1)
    return c * (lap(1.0 - m / 2.0, 1.0) + lap(-m / 2.0, -2.0))


def _as_points(m, z):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != m:
        raise ValueError(f"points must have trailing dimension {m}, got shape {z.shape}")
    return z


def bubble_eval(m: int, z):
    """Standard bubble at points ``z`` (trailing axis of length m)."""
    m = check_dimension(m)
    z = _as_points(m, z)
    return profile(m, np.linalg.norm(z, axis=-1))


@dataclass(frozen=True)
class BubbleParams:
    """Concentration scale ``delta`` and centre offset ``eta`` (rescaled units)."""

    delta: float
    eta: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValueError(f"delta must be positive and finite, got {self.delta}")
        if self.eta is not None:
            eta = np.array(self.eta, dtype=float).reshape(-1)
            eta.setflags(write=False)
            object.__setattr__(self, "eta", eta)

    @classmethod
    def from_eps(cls, eps: float, t: float, eta=None):
        if eps == 0:
            raise ValueError("eps must be nonzero")
        if t <= 0:
            raise ValueError("t must be positive")
        return cls(math.sqrt(abs(eps) * t), eta)

    def center(self, m: int) -> np.ndarray:
        """Centre ``y = delta * eta`` in chart coordinates."""
        if self.eta is None:
            return np.zeros(m)
        if self.eta.size != m:
            raise ValueError("eta has the wrong length")
        return self.delta * self.eta


def bubble_rescaled(m: int, params: BubbleParams, z):
    """``delta^(-(m-2)/2) U((z - y)/delta)`` with ``y = delta * eta``."""
    m = check_dimension(m)
    z = _as_points(m, z)
    d = params.delta
    return d ** (-(m - 2.0) / 2.0) * bubble_eval(m, (z - params.center(m)) / d)


def bubble_residual(m: int, r, relative: bool = False) -> float:
    """Max over radial nodes of ``|-Delta U - U^(2*-1)|``.

    With ``relative`` the maximum is divided by ``max U^(2*-1)`` on the nodes.
    """
    m = check_dimension(m)
    r = np.asarray(r, dtype=float)
    p = critical_exponent(m)
    rhs = profile(m, r) ** (p - 1.0)
    res = float(np.max(np.abs(-profile_laplacian(m, r) - rhs)))
    return res / float(np.max(rhs)) if relative else res


def kernel_eval(m: int, i: int, z):
    """Kernel function V_i of the linearised bubble equation at points ``z``.

    ``i = 0`` is the dilation mode, ``1 <= i <= m`` the translation modes
    ``dU/dz_i``.
    """
    m = check_dimension(m)
    if not 0 <= i <= m:
        raise IndexError(f"kernel index {i} outside 0..{m}")
    z = _as_points(m, z)
    r = np.linalg.norm(z, axis=-1)
    if i == 0:
        return kernel0_profile(m, r)
    return z[..., i - 1] * profile_dr_over_r(m, r)


def kernel_laplacian(m: int, i: int, z):
    """Closed-form Laplacian of V_i."""
    m = check_dimension(m)
    if not 0 <= i <= m:
        raise IndexError(f"kernel index {i} outside 0..{m}")
    z = _as_points(m, z)
    r = np.linalg.norm(z, axis=-1)
    if i == 0:
        return kernel0_laplacian(m, r)
    # V_i = z_i g(r) with g = U'/r; Delta(z_i g) = z_i (g'' + (m+1) g'/r)
    s = 1.0 + r * r
    c = -alpha(m) * (m - 2.0)
    g1_over_r = c * (-m) * s ** (-m / 2.0 - 1.0)
    g2 = g1_over_r + c * m * (m + 2.0) * r * r * s ** (-m / 2.0 - 2.0)
    return z[..., i - 1] * (g2 + (m + 1.0) * g1_over_r)


def kernel_residual(m: int, i: int, z) -> float:
    """Max of ``|-Delta V_i - (2*-1) U^(2*-2) V_i|`` at the points ``z``."""
    p = critical_exponent(m)
    z = _as_points(m, z)
    u = bubble_eval(m, z)
    return float(np.max(np.abs(-kernel_laplacian(m, i, z) - (p - 1.0) * u ** (p - 2.0) * kernel_eval(m, i, z))))


# moment integrals ------------------------------------------------------------

@dataclass(frozen=True)
class MomentIntegral:
    """``I^q_p = int_0^inf r^q / (1+r)^p dr`` by two independent routes."""

    p: float
    q: float
    value: float
    quadrature: float

    @property
    def discrepancy(self) -> float:
        return abs(self.value - self.quadrature) / abs(self.value)


def moment_value(p: float, q: float) -> float:
    if not (q > -1 and p - q > 1):
        raise DivergentMomentError(f"I^q_p diverges for p={p}, q={q} (need q > -1, p - q > 1)")
    return math.exp(special.gammaln(q + 1) + special.gammaln(p - q - 1) - special.gammaln(p))


def moment_quadrature(p: float, q: float) -> float:
    if not (q > -1 and p - q > 1):
        raise DivergentMomentError(f"I^q_p diverges for p={p}, q={q} (need q > -1, p - q > 1)")
    # log form keeps (1 + r)^p finite far out in the tail
    return radial_integral(lambda r: math.exp(q * math.log(r) - p * math.log1p(r)) if r > 0 else 0.0 ** q,
                           decay=p - q)


def moment_integral(p: float, q: float) -> MomentIntegral:
    return MomentIntegral(p, q, moment_value(p, q), moment_quadrature(p, q))


def moment_recurrences(p: float, q: float):
    """Relative defects of the two recurrences at (p, q)."""
    first = moment_value(p + 1, q) - (p - q - 1) / p * moment_value(p, q)
    second = moment_value(p + 1, q + 1) - (q + 1) / (p - q - 1) * moment_value(p + 1, q)
    return abs(first) / moment_value(p + 1, q), abs(second) / moment_value(p + 1, q + 1)


@dataclass(frozen=True)
class SphereConstants:
    omega_m: float
    omega_m_minus_1: float
    K_m: float


def sphere_constants(m: int) -> SphereConstants:
    """Unit-sphere volumes and the sharp Sobolev constant ``K_m``."""
    m = check_dimension(m)
    om = sphere_area(m)
    K = math.sqrt(4.0 / (m * (m - 2.0) * om ** (2.0 / m)))
    return SphereConstants(om, sphere_area(m - 1), K)


class BubbleMoments:
    """Radial moments ``int_{R^m} |z|^(2k) F(z) dz`` of bubble quantities.

    ``method="beta"`` reduces each moment to ``omega_(m-1) I^q_p``; the
    substitution ``s = r^2`` turns ``int r^a (1+r^2)^(-b) dr`` into
    ``I^((a-1)/2)_b / 2``.  ``method="quad"`` integrates the radial profile
    directly.
    """

    def __init__(self, m: int, method: str = "beta"):
        self.m = check_dimension(m)
        if method not in ("beta", "quad"):
            raise ValueError("method must be 'beta' or 'quad'")
        self.method = method
        self.omega = sphere_area(self.m - 1)

    def _power_integral(self, a: float, b: float) -> float:
        # int_0^inf r^a (1 + r^2)^(-b) dr
        if self.method == "beta":
            return 0.5 * moment_value(b, (a - 1.0) / 2.0)
        return radial_integral(lambda r: r ** a * (1.0 + r * r) ** (-b), decay=2 * b - a)

    def grad_sq(self, k: int = 0) -> float:
        """``int |z|^(2k) |grad U|^2``."""
        m = self.m
        c = (alpha(m) * (m - 2.0)) ** 2
        return self.omega * c * self._power_integral(m + 1.0 + 2 * k, m)

    def crit_power(self, k: int = 0) -> float:
        """``int |z|^(2k) U^(2*)``."""
        m = self.m
        c = alpha(m) ** critical_exponent(m)
        return self.omega * c * self._power_integral(m - 1.0 + 2 * k, m)

    def square(self, k: int = 0) -> float:
        """``int |z|^(2k) U^2``."""
        m = self.m
        return self.omega * alpha(m) ** 2 * self._power_integral(m - 1.0 + 2 * k, m - 2.0)

    def power(self, s: float) -> float:
        """``int U^s`` for a real exponent s > m/(m-2)."""
        m = self.m
        if self.method == "beta":
            return self.omega * alpha(m) ** s * self._power_integral(m - 1.0, s * (m - 2.0) / 2.0)
        return self.omega * radial_integral(lambda r: profile(m, r) ** s * r ** (m - 1), decay=s * (m - 2) - m + 1)

    def grad_quartic(self) -> float:
        """``int (U'/|z|)^2 z_1^4`` through the angular moment of theta_1^4."""
        e = np.zeros(self.m, dtype=int)
        e[0] = 4
        ang = sphere_monomial(self.m, e) / self.omega
        return ang * self.grad_sq(1)

    def grad_mixed(self) -> float:
        """``int (U'/|z|)^2 z_1^2 z_2^2``."""
        e = np.zeros(self.m, dtype=int)
        e[:2] = 2
        ang = sphere_monomial(self.m, e) / self.omega
        return ang * self.grad_sq(1)


def grad_weight_moment(m: int, exponents, method: str = "beta") -> float:
    """``int (U'/|z|)^2 z^alpha dz`` for a multi-index with |alpha| = 4."""
    exponents = np.asarray(exponents, dtype=int)
    if exponents.sum() != 4:
        raise ValueError("only fourth-order moments are supported")
    bm = BubbleMoments(m, method)
    return sphere_monomial(m, exponents) / bm.omega * bm.grad_sq(1)


@dataclass
class MomentCheck:
    name: str
    lhs: float
    rhs: float
    tol: float
    scale: float = None

    @property
    def error(self) -> float:
        scale = self.scale if self.scale is not None else max(abs(self.lhs), abs(self.rhs))
        return 0.0 if scale == 0.0 else abs(self.lhs - self.rhs) / scale

    @property
    def passed(self) -> bool:
        return self.error <= self.tol


@dataclass
class FourthMomentReport:
    m: int
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def fourth_moment_checks(m: int, tol: float = 1e-9, method: str = "quad") -> FourthMomentReport:
    """Fourth-moment identities of ``(U'/|z|)^2`` and the gradient split.

    Moments are computed by radial quadrature times closed-form spherical
    moments.  ``b`` uses the decomposition coefficient 1/2 as commonly
    stated; ``b_third`` records the same tensor identity with coefficient
    1/3, which is what isotropy forces (contract i=j=k=h).
    """
    m = check_dimension(m)
    if m <= 4:
        raise DimensionError(f"fourth moments of |grad U|^2 diverge for m={m} (need m >= 5)")
    bm = BubbleMoments(m, method)
    quartic = bm.grad_quartic()
    mixed = bm.grad_mixed()
    checks = [MomentCheck("a", quartic, 3.0 * mixed, tol)]

    # b: compare the full tensor over all index quadruples
    def tensor_lhs(idx):
        e = np.zeros(m, dtype=int)
        for i in idx:
            e[i] += 1
        return grad_weight_moment(m, e, method) if not np.any(e % 2) else 0.0

    def deltas(i, j, k, h):
        return float((i == j) * (h == k) + (i == k) * (j == h) + (i == h) * (j == k))

    # b: the full rank-4 tensor against c * quartic * (sum of delta pairs)
    quads = [(0, 0, 0, 0), (0, 0, 1, 1), (0, 1, 0, 1), (0, 1, 1, 0), (0, 1, 2, 3), (0, 0, 0, 1)]
    lhs_vals = np.array([tensor_lhs(q) for q in quads])
    pattern = np.array([deltas(*q) for q in quads])
    scale = float(np.max(np.abs(lhs_vals)))
    for name, coef in (("b", 0.5), ("b_third", 1.0 / 3.0)):
        worst = int(np.argmax(np.abs(lhs_vals - coef * quartic * pattern)))
        checks.append(MomentCheck(name, float(lhs_vals[worst]), float(coef * quartic * pattern[worst]), tol,
                                  scale=scale))
    checks.append(MomentCheck("b_distinct", float(lhs_vals[4]), float(0.5 * quartic * pattern[4]), tol,
                              scale=scale))

    # c: (1/2) int |grad U|^2 z_i^2 - (1/2*) int U^2* z_i^2 = int (d_i U)^2 z_i^2
    p = critical_exponent(m)
    lhs_c = 0.5 * bm.grad_sq(1) / m - bm.crit_power(1) / (p * m)
    checks.append(MomentCheck("c", lhs_c, quartic, tol))
    return FourthMomentReport(m, checks)


def anchor_identity(m: int):
    """``(I^(m/2)_m, 2 K_m^-m / (alpha_m^2 (m-2)^2 omega_(m-1)))``; the first by quadrature."""
    m = check_dimension(m)
    sc = sphere_constants(m)
    lhs = moment_quadrature(m, m / 2.0)
    rhs = 2.0 * sc.K_m ** (-m) / (alpha(m) ** 2 * (m - 2.0) ** 2 * sc.omega_m_minus_1)
    return lhs, rhs
