"""Numerical laboratory for bubble-concentrating solutions of weighted subcritical/supercritical problems."""

from . import bubble, energy, expansion, geometry, grids, quadrature, reduction, suites
from .bubble import BubbleParams, bubble_eval, sphere_constants
from .energy import closed_form_coeffs, expansion_fit, theta
from .geometry import ManifoldModel, WarpedProduct, flat, round_sphere
from .reduction import correction_fixed_point, reduced_solve, verify_solution

__version__ = "0.1.0"

__all__ = [
    "bubble", "energy", "expansion", "geometry", "grids", "quadrature", "reduction", "suites",
    "BubbleParams", "bubble_eval", "sphere_constants", "closed_form_coeffs", "expansion_fit", "theta",
    "ManifoldModel", "WarpedProduct", "flat", "round_sphere", "correction_fixed_point", "reduced_solve",
    "verify_solution",
]
