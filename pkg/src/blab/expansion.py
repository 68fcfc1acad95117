"""Least-squares regression of ladder energies on asymptotic gauge functions."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted


class IllConditionedFitError(ValueError):
    pass


MAIN_TERMS = ("const", "eps_log", "eps", "abs_eps")


def _column(name, e):
    L = np.log(np.abs(e))
    if name == "const":
        return np.ones_like(e)
    if name == "eps_log":
        return e * L
    if name == "eps":
        return e
    if name == "abs_eps":
        return np.abs(e)
    kind, n, j = name.split(":")
    n, j = int(n), int(j)
    base = e ** n if kind == "pow" else np.abs(e) * e ** (n - 1)
    return base * L ** j


class AsymptoticExpansionRegressor(RegressorMixin, BaseEstimator):
    """Fit ``J(eps)`` by ``1, eps log|eps|, eps, |eps|`` plus higher gauge terms.

    The nuisance terms are ``eps^n log|eps|^j`` (``0 <= j <= n``) for
    ``2 <= n <= order`` and, when ``mixed`` is set, ``|eps| eps^(n-1)
    log|eps|^j`` (``j < n``) as produced by curvature and weight jets.
    Columns are scaled to unit max before solving.

    Parameters
    ----------
    order : int
        Highest power of eps among the nuisance terms (1 disables them).
    mixed : bool
        Include the ``|eps|``-odd products.
    max_condition : float
        Largest acceptable condition number of the scaled design.
    """

    def __init__(self, order: int = 3, mixed: bool = True, max_condition: float = 1e13):
        self.order = order
        self.mixed = mixed
        self.max_condition = max_condition

    def term_names(self):
        names = list(MAIN_TERMS)
        for n in range(2, self.order + 1):
            names += [f"pow:{n}:{j}" for j in range(n + 1)]
            if self.mixed:
                names += [f"abs:{n}:{j}" for j in range(n)]
        return names

    def design(self, eps):
        e = np.asarray(eps, dtype=float).reshape(-1)
        if np.any(e == 0):
            raise ValueError("eps = 0 is outside the fit domain")
        return np.stack([_column(n, e) for n in self.term_names()], axis=1)

    def fit(self, X, y):
        e = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if e.size != y.size:
            raise ValueError("X and y have different lengths")
        A = self.design(e)
        if A.shape[0] < A.shape[1] + 2:
            raise IllConditionedFitError(
                f"ladder of {A.shape[0]} points is too short for {A.shape[1]} regressors")
        if not (np.any(e > 0) and np.any(e < 0)):
            # eps and |eps| coincide on a one-signed ladder
            raise IllConditionedFitError("the ladder must contain both signs of eps")
        scale = np.max(np.abs(A), axis=0)
        As = A / scale
        cond = np.linalg.cond(As)
        if not np.isfinite(cond) or cond > self.max_condition:
            raise IllConditionedFitError(f"design condition number {cond:.3g} exceeds {self.max_condition:.3g}")
        coef, *_ = np.linalg.lstsq(As, y, rcond=None)
        self.coef_ = coef / scale
        self.condition_number_ = float(cond)
        self.n_features_in_ = 1
        self.residual_ = y - A @ self.coef_
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return self.design(X) @ self.coef_

    def named_coefficients(self) -> dict:
        check_is_fitted(self, "coef_")
        return dict(zip(self.term_names(), self.coef_.tolist()))

    def truncation_ratios(self, X, y, drop=(0, 1, 2), order: int = 2):
        """Scaled fit residuals on ladders truncated from the large-|eps| end.

        For each number of dropped magnitudes the ladder is refitted with
        nuisance terms up to ``order`` and ``max|residual| / |eps_min|`` is
        recorded; a decreasing sequence is the empirical o(|eps|) check.
        """
        e = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        mags = np.sort(np.unique(np.abs(e)))[::-1]
        out = []
        for k in drop:
            keep = np.abs(e) < mags[k] * (1 + 1e-12)
            try:
                sub = self.__class__(order=order, mixed=False, max_condition=self.max_condition).fit(e[keep], y[keep])
            except IllConditionedFitError:
                break
            out.append(float(np.max(np.abs(sub.residual_)) / np.min(np.abs(e))))
        return out
