"""Regression coefficients ``B`` (p x q) from a fitted ``(Theta, Lambda)``."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model import ModelState, ProblemDims, cholesky


class BMethod(str, enum.Enum):
    PLUG_IN = "plugin"
    MULTI_REGRESSION = "multiregression"


@dataclass(frozen=True)
class BEstimate:
    b: np.ndarray
    method: BMethod
    selected_covariates: tuple


def selected_rows(theta) -> tuple:
    """Covariates whose cross-precision row has any exactly-nonzero entry."""
    return tuple(int(i) for i in np.flatnonzero(np.any(np.asarray(theta) != 0, axis=1)))


def plug_in_b(state: ModelState) -> BEstimate:
    """``B = -Lambda^{-1} Theta'`` by a Cholesky solve."""
    chol = state.chol if state.chol is not None else cholesky(state.lam)
    b = -linalg.cho_solve((chol, True), state.theta.T)
    sel = selected_rows(state.theta)
    # zero rows of Theta must give exactly zero columns
    mask = np.zeros(state.q, dtype=bool)
    mask[list(sel)] = True
    b[:, ~mask] = 0.0
    return BEstimate(b=b, method=BMethod.PLUG_IN, selected_covariates=sel)


def multi_regression_b(x, y, selected) -> BEstimate:
    """Per-response least squares of ``y`` on the selected columns of ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = tuple(int(i) for i in selected)
    n, q = x.shape
    if not sel:
        raise ValueError("no covariates selected")
    if n <= len(sel):
        raise ValueError(f"least squares needs n > |selected|, got n={n}, |selected|={len(sel)}")
    xs = x[:, list(sel)]
    qmat, rmat = linalg.qr(xs, mode="economic")
    diag = np.abs(np.diag(rmat))
    if diag.min() <= np.finfo(float).eps * max(n, len(sel)) * diag.max():
        raise np.linalg.LinAlgError("selected covariates are collinear")
    coef = linalg.solve_triangular(rmat, qmat.T @ y)
    b = np.zeros((y.shape[1], q))
    b[:, list(sel)] = coef.T
    return BEstimate(b=b, method=BMethod.MULTI_REGRESSION, selected_covariates=sel)


def choose_b_method(dims: ProblemDims, p_threshold: int = 100) -> BMethod:
    return BMethod.PLUG_IN if dims.p <= p_threshold else BMethod.MULTI_REGRESSION


def estimate_b(state: ModelState, x=None, y=None, method: BMethod = None, p_threshold=100):
    """Dispatch to the plug-in or multiple-regression estimator.

    Falls back to an all-zero plug-in estimate when multiple regression is
    requested but no covariate was selected.
    """
    if method is None:
        n = 1 if x is None else len(x)
        method = choose_b_method(ProblemDims(n, state.p, state.q), p_threshold)
    method = BMethod(method)
    if method is BMethod.PLUG_IN:
        return plug_in_b(state)
    if x is None or y is None:
        raise ValueError("multiple regression needs the training data")
    sel = selected_rows(state.theta)
    if not sel:
        return BEstimate(np.zeros((state.p, state.q)), BMethod.MULTI_REGRESSION, ())
    return multi_regression_b(x, y, sel)
