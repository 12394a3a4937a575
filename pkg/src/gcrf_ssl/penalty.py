"""Spike-and-slab Laplace penalties, their derivatives and inclusion probabilities.

Every mixture is handled in log space: the row-level quantities are products
over ``p`` Laplace densities and underflow quickly otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import Hyperparams, ModelState


@dataclass(frozen=True)
class InclusionProbs:
    p_theta: np.ndarray
    p_lambda: np.ndarray
    row_probs_theta: np.ndarray


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def laplace_log_density(x, nu):
    """Log of ``exp(-|x| / nu) / (2 nu)``."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ValueError(f"Laplace scale must be positive, got {nu}")
    out = -np.log(2.0 * nu) - np.abs(x) / nu
    return float(out) if np.ndim(out) == 0 else out


def _log_slab_mix(x, nu1, nu0, eta):
    # log(eta LP(x, nu1) + (1 - eta) LP(x, nu0))
    return np.logaddexp(_log(eta) + laplace_log_density(x, nu1),
                        _log(1.0 - eta) + laplace_log_density(x, nu0))


def eta1(x, nu1, nu0, eta):
    """Posterior slab probability of a single coefficient."""
    logit = (np.log(eta) - _log(1.0 - eta)
             + laplace_log_density(x, nu1) - laplace_log_density(x, nu0))
    out = expit(logit)
    return float(out) if np.ndim(out) == 0 else out


def _row_logit(row, nu1, nu0, eta, rho):
    row = np.asarray(row, dtype=float)
    log_s1 = np.sum(_log_slab_mix(row, nu1, nu0, eta), axis=-1)
    log_s2 = np.sum(laplace_log_density(row, nu0), axis=-1)
    return np.log(rho) - _log(1.0 - rho) + log_s1 - log_s2, log_s1, log_s2


def row_eta2(row, nu1, nu0, eta, rho):
    """Posterior probability that a whole row belongs to the slab group.

    ``row`` may be 2-d, in which case one probability per row is returned.
    """
    logit, _, _ = _row_logit(row, nu1, nu0, eta, rho)
    out = expit(logit)
    return float(out) if np.ndim(out) == 0 else out


def eta2(theta_row, hp: Hyperparams):
    return row_eta2(theta_row, hp.nu1_theta, hp.nu0_theta, hp.eta_theta, hp.rho)


def mss_penalty(row, nu1, nu0, eta, rho):
    """``-log(rho S1 + (1 - rho) S2)`` for one row (or each row of a 2-d array)."""
    _, log_s1, log_s2 = _row_logit(row, nu1, nu0, eta, rho)
    out = -np.logaddexp(np.log(rho) + log_s1, _log(1.0 - rho) + log_s2)
    return float(out) if np.ndim(out) == 0 else out


def ss_penalty(x, nu1, nu0, eta):
    out = -_log_slab_mix(x, nu1, nu0, eta)
    return float(out) if np.ndim(out) == 0 else out


def pen_mss(theta_row, hp: Hyperparams):
    return mss_penalty(theta_row, hp.nu1_theta, hp.nu0_theta, hp.eta_theta, hp.rho)


def pen_ss(x, hp: Hyperparams):
    return ss_penalty(x, hp.nu1_lambda, hp.nu0_lambda, hp.eta_lambda)


def ss_penalty_derivative(x, nu1, nu0, eta):
    w = eta1(x, nu1, nu0, eta)
    return w / nu1 + (1.0 - w) / nu0


def mss_penalty_derivative(row, nu1, nu0, eta, rho):
    """Derivative of the row penalty with respect to each ``|row_j|``.

    Returns an array shaped like ``row``.
    """
    row = np.asarray(row, dtype=float)
    w = eta1(row, nu1, nu0, eta) * np.expand_dims(row_eta2(row, nu1, nu0, eta, rho), -1)
    return w / nu1 + (1.0 - w) / nu0


def pen_ss_derivative(x, hp: Hyperparams):
    return ss_penalty_derivative(x, hp.nu1_lambda, hp.nu0_lambda, hp.eta_lambda)


def pen_mss_derivative(theta_row, j, hp: Hyperparams) -> float:
    d = mss_penalty_derivative(theta_row, hp.nu1_theta, hp.nu0_theta, hp.eta_theta, hp.rho)
    return float(d[j])


def compute_inclusion_probs(state: ModelState, hp: Hyperparams) -> InclusionProbs:
    rows = row_eta2(state.theta, hp.nu1_theta, hp.nu0_theta, hp.eta_theta, hp.rho)
    rows = np.atleast_1d(rows)
    p_theta = eta1(state.theta, hp.nu1_theta, hp.nu0_theta, hp.eta_theta) * rows[:, None]
    p_lambda = np.asarray(eta1(state.lam, hp.nu1_lambda, hp.nu0_lambda, hp.eta_lambda), dtype=float)
    p_lambda = 0.5 * (p_lambda + p_lambda.T)
    np.fill_diagonal(p_lambda, 1.0)
    return InclusionProbs(p_theta=p_theta, p_lambda=p_lambda, row_probs_theta=rows)


def total_penalty(state: ModelState, hp: Hyperparams) -> float:
    """Row penalties over the cross-precision plus element penalties over the upper triangle."""
    rows = mss_penalty(state.theta, hp.nu1_theta, hp.nu0_theta, hp.eta_theta, hp.rho)
    iu = np.triu_indices(state.p, k=1)
    offd = ss_penalty(state.lam[iu], hp.nu1_lambda, hp.nu0_lambda, hp.eta_lambda)
    return float(np.sum(rows) + np.sum(offd))
