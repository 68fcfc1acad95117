"""Verification suites shared by the command line and the acceptance tests."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import bubble, energy, geometry


@dataclass
class Check:
    name: str
    module: str
    value: float
    tol: float
    passed: bool
    detail: str = ""

    def to_dict(self):
        d = asdict(self)
        d["value"] = float(d["value"]) if d["value"] is not None else None
        return d


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def moment_pairs(n: int = 20, seed: int = 0):
    """A reproducible grid of admissible ``(p, q)`` pairs."""
    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n:
        q = float(rng.uniform(-0.9, 8.0))
        p = q + float(rng.uniform(1.2, 12.0))
        pairs.append((round(p, 6), round(q, 6)))
    return pairs


def bubble_suite(dims=(5, 6, 9, 12), nodes: int = 200, r_max: float = 50.0, tol: float = 1e-10):
    out = []
    r = np.linspace(0.0, r_max, nodes)
    for m in dims:
        start = time.perf_counter()
        res = bubble.bubble_residual(m, r, relative=True)
        elapsed = time.perf_counter() - start
        out.append(Check(f"bubble_residual[m={m}]", "bubble_calculus", res, tol, res <= tol and elapsed < 1.0,
                         f"{nodes} nodes on [0, {r_max}], under 1 s"))
    return out


def moment_suite(n_pairs: int = 20, seed: int = 0, tol_quad: float = 1e-10, tol_rec: float = 1e-12,
                 anchor_dims=(5, 9)):
    out = []
    worst_q, worst_r = 0.0, 0.0
    for p, q in moment_pairs(n_pairs, seed):
        mi = bubble.moment_integral(p, q)
        worst_q = max(worst_q, mi.discrepancy)
        worst_r = max(worst_r, *bubble.moment_recurrences(p, q))
    out.append(Check("moment_beta_vs_quadrature", "bubble_calculus", worst_q, tol_quad, worst_q <= tol_quad,
                     f"{n_pairs} pairs"))
    out.append(Check("moment_recurrences", "bubble_calculus", worst_r, tol_rec, worst_r <= tol_rec))
    for m in anchor_dims:
        lhs, rhs = bubble.anchor_identity(m)
        err = _rel(lhs, rhs)
        out.append(Check(f"moment_anchor[m={m}]", "bubble_calculus", err, tol_quad, err <= tol_quad))
    return out


def identity_suite(m: int = 9, tol: float = 1e-9, convention: str = "stated"):
    """Identity locks and the fourth-moment decomposition.

    In the ``stated`` convention lock A uses ``3 K^-m/(m(m-4))`` and the
    decomposition uses the coefficient 1/2; ``corrected`` asserts the
    values the moments produce instead.
    """
    locks = {c.name: c for c in energy.identity_locks(m, tol)}
    fm = bubble.fourth_moment_checks(m, tol)
    lock_a = locks["lock_A"] if convention == "stated" else locks["lock_A_half"]
    decomposition = fm["b"] if convention == "stated" else fm["b_third"]
    rows = [("eta_bracket", locks["eta_bracket"]), ("lock_A", lock_a), ("lock_B", locks["lock_B"]),
            ("fourth_moment_decomposition", decomposition), ("fourth_moment_a", fm["a"]),
            ("fourth_moment_c", fm["c"])]
    out = []
    for name, c in rows:
        out.append(Check(f"{name}[m={m}]", "reduced_energy" if name.startswith(("eta", "lock")) else "bubble_calculus",
                         c.error, tol, c.passed, f"lhs={c.lhs:.15g} rhs={c.rhs:.15g}"))
    return out


def curvature_suite(dims=(3, 9), tol: float = 1e-12):
    out = []
    for m in dims:
        for rho in (1.0, 2.0):
            S = geometry.scalar_curvature(geometry.round_sphere(m, rho))
            exact = m * (m - 1.0) / rho ** 2
            err = _rel(S, exact)
            out.append(Check(f"scalar_curvature[m={m},rho={rho}]", "manifold_geometry", err, tol, err <= tol))
    return out


def regime_suite(m: int = 9):
    """Solve/refuse decisions for the four sign combinations."""
    out = []
    for th in (1.0, -1.0):
        for sign in (1, -1):
            fn = energy.ReducedEnergyFn(m, th, np.eye(m), sign)
            expected = th * sign > 0
            try:
                energy.critical_point(fn)
                decided = True
            except energy.RegimeError:
                decided = False
            out.append(Check(f"regime[theta={th:+g},eps={sign:+d}]", "reduced_energy", float(decided),
                             0.0, decided == expected, "solve" if decided else "refuse"))
    return out


def all_passed(checks) -> bool:
    return all(c.passed for c in checks)


def failures(checks):
    return [c for c in checks if not c.passed]


def finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)
