"""Adaptive radial quadrature and spherical moment formulas."""

from __future__ import annotations

import math
import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate, special


class QuadratureError(RuntimeError):
    pass


def _segment(f, a, b, rtol):
    # requested tolerances sit at roundoff; quad's roundoff warning is expected
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, epsabs=0.0, epsrel=max(rtol, 1.2e-14), limit=400)
    return val, err


def radial_integral(f, decay=None, upper=math.inf, rtol=1e-14, tail_tol=1e-14):
    """Integrate ``f`` over ``[0, upper)`` by adaptive Gauss-Kronrod.

    ``f`` must be vectorisation-agnostic (called with floats).  On infinite
    ranges ``decay`` is an exponent k > 1 with ``|f(r)| <= C r**-k`` for
    large r; the range is truncated at the first R where the bound
    ``C R**(1-k)/(k-1)`` (C estimated from ``|f(R)| R**k``) drops below
    ``tail_tol`` times the partial sum.  Segments past r = 1 are integrated
    in the variable ``log r``.
    """
    upper = float(upper)
    if math.isfinite(upper):
        if upper <= 1.0:
            return _segment(f, 0.0, upper, rtol)[0]
        total = _segment(f, 0.0, 1.0, rtol)[0]
        g = lambda s: f(math.exp(s)) * math.exp(s)
        edges = np.arange(0.0, math.log(upper), 2.0).tolist() + [math.log(upper)]
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += _segment(g, lo, hi, rtol)[0]
        return total

    if decay is None or decay <= 1.0:
        raise QuadratureError("an integrable decay exponent k > 1 is required on [0, inf)")
    total = _segment(f, 0.0, 1.0, rtol)[0]
    g = lambda s: f(math.exp(s)) * math.exp(s)
    lo = 0.0
    for _ in range(400):
        hi = lo + 2.0
        total += _segment(g, lo, hi, rtol)[0]
        R = math.exp(hi)
        bound = abs(f(R)) * R / (decay - 1.0)
        if bound <= tail_tol * abs(total) or (total == 0.0 and bound == 0.0):
            return total
        lo = hi
    raise QuadratureError("tail bound not reached; decay exponent too close to 1")


def sphere_area(n: int) -> float:
    """Volume of the unit n-sphere in R^(n+1)."""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / math.gamma((n + 1) / 2.0)


def sphere_monomial(m: int, alpha) -> float:
    """Integral of prod(theta_i ** alpha_i) over the unit sphere S^(m-1)."""
    alpha = np.asarray(alpha, dtype=int)
    if alpha.shape != (m,):
        raise ValueError("exponent vector must have length m")
    if np.any(alpha % 2):
        return 0.0
    b = (alpha + 1) / 2.0
    logv = math.log(2.0) + sum(special.gammaln(b)) - special.gammaln(b.sum())
    return math.exp(logv)


@lru_cache(maxsize=None)
def _pairings(n: int):
    if n == 0:
        return ((),)
    out = []
    for j in range(1, n):
        rest = [k for k in range(1, n) if k != j]
        for sub in _pairings(n - 2):
            out.append(((0, j),) + tuple((rest[a], rest[b]) for a, b in sub))
    return tuple(out)


def sphere_tensor_integral(m: int, tensors) -> float:
    """Integral over S^(m-1) of the product of the forms ``T(theta, ..., theta)``.

    Each tensor of order k is fully contracted with k copies of theta.  The
    isotropic moment ``int theta_i1 ... theta_i2k`` equals
    ``omega_(m-1) / (m (m+2) ... (m+2k-2))`` times the sum over perfect
    pairings of products of Kronecker deltas.
    """
    tensors = [np.asarray(T, dtype=float) for T in tensors]
    orders = [T.ndim for T in tensors]
    n = sum(orders)
    if n % 2:
        return 0.0
    scalars = [float(T) for T in tensors if T.ndim == 0]
    arrays = [T for T in tensors if T.ndim > 0]
    scale = math.prod(scalars) if scalars else 1.0
    k = n // 2
    norm = sphere_area(m - 1) / math.prod(m + 2 * j for j in range(k))
    if n == 0:
        return scale * sphere_area(m - 1)
    letters = "abcdefghijklmnopqrstuvwxyz"
    total = 0.0
    for pairing in _pairings(n):
        label = [""] * n
        for slot, (p, q) in enumerate(pairing):
            label[p] = label[q] = letters[slot]
        subs, pos = [], 0
        for T in arrays:
            subs.append("".join(label[pos:pos + T.ndim]))
            pos += T.ndim
        total += np.einsum(",".join(subs) + "->", *arrays)
    return scale * norm * total


def gauss_lobatto(p: int):
    """Gauss-Lobatto-Legendre nodes on [-1, 1] for polynomial degree p."""
    if p < 1:
        raise ValueError("degree must be >= 1")
    interior = np.polynomial.legendre.Legendre.basis(p).deriv().roots()
    return np.concatenate(([-1.0], np.sort(interior.real), [1.0]))


def lagrange_matrices(nodes, points):
    """Values and derivatives of the Lagrange basis on ``nodes`` at ``points``."""
    nodes = np.asarray(nodes, dtype=float)
    points = np.asarray(points, dtype=float)
    n = nodes.size
    V = np.ones((points.size, n))
    dV = np.zeros((points.size, n))
    for j in range(n):
        others = [k for k in range(n) if k != j]
        denom = np.prod(nodes[j] - nodes[others])
        diffs = points[:, None] - nodes[others][None, :]
        V[:, j] = np.prod(diffs, axis=1) / denom
        acc = np.zeros(points.size)
        for a in range(len(others)):
            acc += np.prod(np.delete(diffs, a, axis=1), axis=1)
        dV[:, j] = acc / denom
    return V, dV
