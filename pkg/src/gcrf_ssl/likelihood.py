"""GCRF log-likelihood, its gradient and the local second-order model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelState, SufficientStats


@dataclass(frozen=True)
class Gradient:
    g_theta: np.ndarray
    g_lambda: np.ndarray


def log_likelihood(state: ModelState, stats: SufficientStats) -> float:
    """``(n/2)(log det L - tr(S_yy L + 2 S_xy' T + L^{-1} T' S_xx T))``."""
    th, w = state.theta, state.lam_inv
    tr_yy = float(np.sum(stats.s_yy * state.lam))
    tr_xy = float(np.sum(stats.s_xy * th))
    tr_quad = float(np.sum(w * (th.T @ stats.s_xx @ th)))
    return 0.5 * stats.n * (state.logdet() - tr_yy - 2.0 * tr_xy - tr_quad)


def gradient(state: ModelState, stats: SufficientStats) -> Gradient:
    n = stats.n
    w = state.lam_inv
    sxx_th = stats.s_xx @ state.theta
    g_theta = -n * (stats.s_xy + sxx_th @ w)
    a = w @ state.theta.T @ sxx_th @ w
    g_lambda = 0.5 * n * (w - stats.s_yy + a)
    return Gradient(g_theta, 0.5 * (g_lambda + g_lambda.T))


def quadratic_model(state: ModelState, stats: SufficientStats, delta_theta, delta_lambda) -> float:
    """Second-order Taylor expansion of the log-likelihood around ``state``.

    Evaluated term by term as traces; the Hessian is never formed. Only the
    symmetric part of ``delta_lambda`` is used, since the precision stays symmetric.
    """
    n = stats.n
    th, lam, w = state.theta, state.lam, state.lam_inv
    sxx, syy, sxy = stats.s_xx, stats.s_yy, stats.s_xy
    d, e = np.asarray(delta_theta, float), np.asarray(delta_lambda, float)
    e = 0.5 * (e + e.T)

    m = th.T @ sxx @ th
    we = w @ e
    wew = we @ w
    a = w @ m @ w

    val = 0.5 * n * state.logdet()
    val -= 0.5 * n * np.sum(syy * lam)
    val -= n * np.sum(sxy * th)
    val -= 0.5 * n * np.sum(w * m)
    val += 0.5 * n * np.trace(we)
    val -= 0.5 * n * np.sum(syy * e)
    val += 0.5 * n * np.sum(a * e)
    val -= 0.25 * n * np.sum(we * we.T)
    val -= 0.5 * n * np.sum((we @ a) * e.T)
    val += n * np.sum(wew * (th.T @ sxx @ d).T)
    val -= n * np.sum(sxy * d)
    val -= n * np.sum((sxx @ th @ w) * d)
    val -= 0.5 * n * np.sum(w * (d.T @ sxx @ d))
    return float(val)
