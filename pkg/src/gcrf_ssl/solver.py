"""EM with a proximal-Newton coordinate-descent M-step.

Outer loop: freeze inclusion probabilities (E-step), which turns the
spike-and-slab penalties into weighted l1 terms. Inner loop: build a Newton
direction by one cyclic coordinate pass over the active sets of the weighted
lasso on the local quadratic model, then backtrack along it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .likelihood import Gradient, gradient, log_likelihood
from .model import (
    Hyperparams,
    ModelState,
    NotPositiveDefiniteError,
    SufficientStats,
    initialize_state,
    spectral_norm,
)
from .penalty import (
    InclusionProbs,
    compute_inclusion_probs,
    mss_penalty_derivative,
    ss_penalty_derivative,
    total_penalty,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    armijo_sigma: float = 1e-4
    backtrack_beta: float = 0.5
    min_step: float = 1e-10
    # spike scales on the warm-started ladder of the second start; 0 keeps the single zero start
    continuation_steps: int = 5

    def __post_init__(self):
        if not 0 < self.armijo_sigma < 0.5:
            raise ValueError("armijo_sigma must lie in (0, 0.5)")
        if not 0 < self.backtrack_beta < 1:
            raise ValueError("backtrack_beta must lie in (0, 1)")
        if not 0 < self.min_step < 1:
            raise ValueError("min_step must lie in (0, 1)")
        if self.continuation_steps < 0:
            raise ValueError("continuation_steps must be nonnegative")


@dataclass
class SolverTrace:
    objective_per_outer_iter: list = field(default_factory=list)
    active_set_sizes: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    converged: bool = False
    outer_iters_used: int = 0
    stalled: bool = False
    skipped_coords: int = 0
    inner_iters_used: int = 0
    start: str = "zero"


@dataclass
class NewtonDirection:
    """Newton step with the running products ``delta_theta @ W`` and ``delta_lambda @ W``."""

    delta_theta: np.ndarray
    delta_lambda: np.ndarray
    dtheta_w: np.ndarray
    dlambda_w: np.ndarray

    @classmethod
    def zeros(cls, q, p):
        return cls(np.zeros((q, p)), np.zeros((p, p)), np.zeros((q, p)), np.zeros((p, p)))

    def is_zero(self) -> bool:
        return not (np.any(self.delta_theta) or np.any(self.delta_lambda))


@dataclass(frozen=True)
class MStepCache:
    """Products of the current iterate that stay fixed during one coordinate pass.

    ``w`` is the inverse precision, ``k = S_xx Theta W``, ``a = W Theta' S_xx Theta W``
    and ``c1 = S_xy + k``.
    """

    w: np.ndarray
    k: np.ndarray
    a: np.ndarray
    c1: np.ndarray
    s_xx: np.ndarray
    s_yy: np.ndarray
    n: float

    @classmethod
    def build(cls, state: ModelState, stats: SufficientStats) -> "MStepCache":
        w = state.lam_inv
        pmat = state.theta @ w
        k = stats.s_xx @ pmat
        a = pmat.T @ k
        a = 0.5 * (a + a.T)
        return cls(w=w, k=k, a=a, c1=stats.s_xy + k, s_xx=stats.s_xx, s_yy=stats.s_yy,
                   n=float(stats.n))


def soft_threshold(x, kappa):
    return np.sign(x) * np.maximum(np.abs(x) - kappa, 0.0)


def lasso_step(a, b, c, tau):
    """Minimizer ``d`` of ``a d^2 / 2 + b d + tau |c + d|``."""
    return -c + soft_threshold(c - b / a, tau / a)


def negative_log_posterior(state: ModelState, stats: SufficientStats, hp: Hyperparams) -> float:
    return -log_likelihood(state, stats) + total_penalty(state, hp)


def e_step(state: ModelState, hp: Hyperparams) -> InclusionProbs:
    return compute_inclusion_probs(state, hp)


def mstep_penalty_weights(probs: InclusionProbs, hp: Hyperparams):
    """Weighted-l1 coefficients of the M-step objective; the precision diagonal gets 0."""
    tau_theta = probs.p_theta / hp.nu1_theta + (1.0 - probs.p_theta) / hp.nu0_theta
    tau_lambda = probs.p_lambda / hp.nu1_lambda + (1.0 - probs.p_lambda) / hp.nu0_lambda
    np.fill_diagonal(tau_lambda, 0.0)
    return tau_theta, tau_lambda


def mstep_objective(state: ModelState, stats: SufficientStats, tau_theta, tau_lambda) -> float:
    """``-l + sum tau_theta |Theta| + sum_{i<j} tau_lambda |Lambda_ij|``."""
    iu = np.triu_indices(state.p, k=1)
    pen = np.sum(tau_theta * np.abs(state.theta)) + np.sum(tau_lambda[iu] * np.abs(state.lam[iu]))
    return -log_likelihood(state, stats) + float(pen)


def active_sets(state: ModelState, stats: SufficientStats, hp: Hyperparams, grad: Gradient = None):
    """Boolean masks of the coordinates eligible for update.

    A cross-precision entry is active when it is nonzero or when the likelihood
    gradient exceeds the penalty slope there. Off-diagonal precision entries move
    as symmetric pairs, so their likelihood slope is twice the matrix gradient
    entry; only the upper triangle of the returned mask is meaningful off the
    diagonal, and the diagonal is always active.
    """
    if grad is None:
        grad = gradient(state, stats)
    pen_t = mss_penalty_derivative(state.theta, hp.nu1_theta, hp.nu0_theta, hp.eta_theta, hp.rho)
    act_t = (np.abs(grad.g_theta) > pen_t) | (state.theta != 0)
    pen_l = ss_penalty_derivative(state.lam, hp.nu1_lambda, hp.nu0_lambda, hp.eta_lambda)
    act_l = (np.abs(2.0 * grad.g_lambda) > pen_l) | (state.lam != 0)
    act_l = np.triu(act_l, k=1)
    np.fill_diagonal(act_l, True)
    return act_t, act_l


def theta_coefficients(i, j, state, direction, cache: MStepCache):
    a = cache.n * cache.w[j, j] * cache.s_xx[i, i]
    b = cache.n * (cache.c1[i, j]
                   - cache.k[i] @ direction.dlambda_w[:, j]
                   + cache.s_xx[i] @ direction.dtheta_w[:, j])
    c = state.theta[i, j] + direction.delta_theta[i, j]
    return a, b, c


def lambda_offdiag_coefficients(i, j, state, direction, cache: MStepCache):
    w, am = cache.w, cache.a
    u, v, k = direction.dtheta_w, direction.dlambda_w, cache.k
    a = cache.n * (w[i, j] ** 2 + w[i, i] * w[j, j] + 2.0 * w[i, j] * am[i, j]
                   + w[i, i] * am[j, j] + w[j, j] * am[i, i])
    cross = u[:, i] @ k[:, j] + u[:, j] @ k[:, i]
    va = v[:, i] @ am[:, j] + v[:, j] @ am[:, i]
    b = -cache.n * (w[i, j] - cache.s_yy[i, j] + am[i, j] + cross - w[i] @ v[:, j] - va)
    c = state.lam[i, j] + direction.delta_lambda[i, j]
    return a, b, c


def lambda_diag_coefficients(i, state, direction, cache: MStepCache):
    w, am = cache.w, cache.a
    u, v, k = direction.dtheta_w, direction.dlambda_w, cache.k
    a = cache.n * (w[i, i] ** 2 + 2.0 * w[i, i] * am[i, i])
    b = -cache.n * (w[i, i] - cache.s_yy[i, i] + am[i, i] + 2.0 * (u[:, i] @ k[:, i])
                    - w[i] @ v[:, i] - 2.0 * (v[:, i] @ am[:, i]))
    c = state.lam[i, i] + direction.delta_lambda[i, i]
    return a, b, c


def coord_update_theta(i, j, state, stats, direction: NewtonDirection, tau, cache=None) -> float:
    """Apply one lasso coordinate step to ``delta_theta[i, j]`` and return the increment."""
    cache = cache or MStepCache.build(state, stats)
    a, b, c = theta_coefficients(i, j, state, direction, cache)
    if not a > 0:
        log.debug("skipping theta[%d, %d]: curvature %g", i, j, a)
        return 0.0
    u = float(lasso_step(a, b, c, tau))
    if u != 0.0:
        direction.delta_theta[i, j] += u
        direction.dtheta_w[i] += u * cache.w[j]
    return u


def coord_update_lambda_offdiag(i, j, state, stats, direction: NewtonDirection, tau,
                                cache=None) -> float:
    """Lasso step on the symmetric pair ``(i, j), (j, i)`` of ``delta_lambda``."""
    cache = cache or MStepCache.build(state, stats)
    a, b, c = lambda_offdiag_coefficients(i, j, state, direction, cache)
    if not a > 0:
        log.debug("skipping lambda[%d, %d]: curvature %g", i, j, a)
        return 0.0
    u = float(lasso_step(a, b, c, tau))
    if u != 0.0:
        direction.delta_lambda[i, j] += u
        direction.delta_lambda[j, i] += u
        direction.dlambda_w[i] += u * cache.w[j]
        direction.dlambda_w[j] += u * cache.w[i]
    return u


def coord_update_lambda_diag(i, state, stats, direction: NewtonDirection, cache=None) -> float:
    cache = cache or MStepCache.build(state, stats)
    a, b, _ = lambda_diag_coefficients(i, state, direction, cache)
    if not a > 0:
        log.debug("skipping lambda[%d, %d]: curvature %g", i, i, a)
        return 0.0
    u = float(-b / a)
    if u != 0.0:
        direction.delta_lambda[i, i] += u
        direction.dlambda_w[i] += u * cache.w[i]
    return u


def newton_direction(state, stats, tau_theta, tau_lambda, act_theta, act_lambda, cache=None):
    """One cyclic pass: active cross-precision entries row-major, then active
    upper-triangular precision pairs row-major, then every diagonal entry.

    Returns the direction and the number of coordinates skipped for
    nonpositive curvature.
    """
    cache = cache or MStepCache.build(state, stats)
    q, p = state.theta.shape
    direction = NewtonDirection.zeros(q, p)
    ti, tj = np.nonzero(act_theta)
    li, lj = np.nonzero(np.triu(act_lambda, k=1))
    skipped = _kernels.sweep(
        ti.astype(np.int64), tj.astype(np.int64), li.astype(np.int64), lj.astype(np.int64),
        state.theta, state.lam, cache.w, cache.k, cache.a, cache.c1, cache.s_xx, cache.s_yy,
        cache.n, np.ascontiguousarray(tau_theta), np.ascontiguousarray(tau_lambda),
        direction.delta_theta, direction.delta_lambda, direction.dtheta_w, direction.dlambda_w,
    )
    return direction, int(skipped)


def predicted_decrease(state, grad: Gradient, direction: NewtonDirection, tau_theta, tau_lambda):
    """First-order change of the M-step objective along the full step.

    ``-<grad l, delta> + P(Phi + delta) - P(Phi)`` with ``P`` the frozen
    weighted l1 term; negative for a descent direction.
    """
    iu = np.triu_indices(state.p, k=1)
    lin = np.sum(grad.g_theta * direction.delta_theta) + np.sum(grad.g_lambda * direction.delta_lambda)
    new_t = state.theta + direction.delta_theta
    new_l = state.lam[iu] + direction.delta_lambda[iu]
    dpen = (np.sum(tau_theta * (np.abs(new_t) - np.abs(state.theta)))
            + np.sum(tau_lambda[iu] * (np.abs(new_l) - np.abs(state.lam[iu]))))
    return float(-lin + dpen)


def line_search(state, stats, hp: Hyperparams, config: SolverConfig, direction: NewtonDirection,
                probs: InclusionProbs = None, tau=None, grad: Gradient = None, q_current=None):
    """Backtrack from a unit step until the precision is positive definite,
    within the spectral bound, and the M-step objective decreases sufficiently.

    Returns ``(alpha, state)``; ``alpha == 0`` and the unchanged state signal a stall.
    """
    if tau is None:
        tau = mstep_penalty_weights(probs if probs is not None else e_step(state, hp), hp)
    tau_theta, tau_lambda = tau
    if grad is None:
        grad = gradient(state, stats)
    if q_current is None:
        q_current = mstep_objective(state, stats, tau_theta, tau_lambda)
    slope = predicted_decrease(state, grad, direction, tau_theta, tau_lambda)
    if not slope < 0:
        return 0.0, state
    alpha = 1.0
    while alpha >= config.min_step:
        lam = state.lam + alpha * direction.delta_lambda
        lam = 0.5 * (lam + lam.T)
        try:
            cand = ModelState(state.theta + alpha * direction.delta_theta, lam)
        except NotPositiveDefiniteError:
            alpha *= config.backtrack_beta
            continue
        if math.isfinite(hp.spectral_bound_r) and spectral_norm(lam) > hp.spectral_bound_r:
            alpha *= config.backtrack_beta
            continue
        q_new = mstep_objective(cand, stats, tau_theta, tau_lambda)
        if q_new <= q_current + config.armijo_sigma * alpha * slope:
            return alpha, cand
        alpha *= config.backtrack_beta
    return 0.0, state


def _rel_change(new, old):
    return abs(new - old) / (1.0 + abs(old))


def spike_ladder(hp: Hyperparams, steps: int) -> list:
    """Hyperparameters with geometrically shrinking spike scales, widest first.

    The widest spike is half the narrower slab; the target scales are not included.
    """
    top = 0.5 * min(hp.nu1_theta / hp.nu0_theta, hp.nu1_lambda / hp.nu0_lambda)
    if steps == 0 or top <= 1.0:
        return []
    factors = np.geomspace(top, 1.0, steps + 1)[:-1]
    return [replace(hp, nu0_theta=hp.nu0_theta * f, nu0_lambda=hp.nu0_lambda * f) for f in factors]


def fit(stats: SufficientStats, hp: Hyperparams = None, config: SolverConfig = None,
        init: ModelState = None, callback=None):
    """Maximum a posteriori estimate of ``(Theta, Lambda)``.

    The EM iteration is run from ``init`` (default ``Theta = 0, Lambda = I``).
    Because the posterior is multimodal, a second start is also run: the same
    iteration along a ladder of wider spike scales, each warm-started from the
    previous, ending at the target scales. The start with the lower negative
    log-posterior is returned (ties keep the first). Set
    ``config.continuation_steps = 0`` for the single start only.

    Returns ``(state, probs, trace)`` where ``probs`` are the inclusion
    probabilities at the returned state. ``callback(state)``, if given, is
    called after every accepted step of every run.
    """
    hp = hp or Hyperparams()
    config = config or SolverConfig()
    state, trace = _fit_single(stats, hp, config, init, callback)
    ladder = spike_ladder(hp, config.continuation_steps)
    if ladder and not (trace.stalled and not trace.step_sizes):
        warm = init
        for stage in ladder:
            warm, _ = _fit_single(stats, stage, config, warm, callback)
        alt, alt_trace = _fit_single(stats, hp, config, warm, callback)
        alt_trace.start = "continuation"
        if alt_trace.objective_per_outer_iter[-1] < trace.objective_per_outer_iter[-1]:
            log.info("continuation start wins: %.10g < %.10g", alt_trace.objective_per_outer_iter[-1],
                     trace.objective_per_outer_iter[-1])
            state, trace = alt, alt_trace
    return state, e_step(state, hp), trace


def _fit_single(stats, hp, config, init, callback):
    state = init.copy() if init is not None else initialize_state(stats.dims)
    trace = SolverTrace()
    obj = negative_log_posterior(state, stats, hp)
    trace.objective_per_outer_iter.append(obj)
    progressed = False

    for outer in range(hp.max_outer_iters):
        probs = e_step(state, hp)
        tau_theta, tau_lambda = mstep_penalty_weights(probs, hp)
        q_cur = mstep_objective(state, stats, tau_theta, tau_lambda)
        stationary = False
        for inner in range(hp.max_inner_iters):
            trace.inner_iters_used += 1
            grad = gradient(state, stats)
            act_t, act_l = active_sets(state, stats, hp, grad)
            trace.active_set_sizes.append((int(act_t.sum()), int(np.triu(act_l, 1).sum())))
            direction, skipped = newton_direction(state, stats, tau_theta, tau_lambda, act_t, act_l)
            trace.skipped_coords += skipped
            if direction.is_zero():
                stationary = inner == 0
                break
            slope = predicted_decrease(state, grad, direction, tau_theta, tau_lambda)
            alpha, new_state = line_search(state, stats, hp, config, direction,
                                           tau=(tau_theta, tau_lambda), grad=grad, q_current=q_cur)
            if alpha == 0.0:
                # a step too small to register is convergence, not failure
                if abs(slope) <= hp.inner_tol * (1.0 + abs(q_cur)):
                    stationary = inner == 0
                else:
                    trace.stalled = True
                    log.info("line search stalled at outer %d inner %d (slope %g)", outer, inner, slope)
                break
            state = new_state
            progressed = True
            if callback is not None:
                callback(state)
            trace.step_sizes.append(alpha)
            q_new = mstep_objective(state, stats, tau_theta, tau_lambda)
            done = _rel_change(q_new, q_cur) < hp.inner_tol
            q_cur = q_new
            if done:
                break

        new_obj = negative_log_posterior(state, stats, hp)
        trace.objective_per_outer_iter.append(new_obj)
        trace.outer_iters_used = outer + 1
        log.debug("outer %d: objective %.10g", outer, new_obj)
        if trace.stalled:
            break
        if stationary or _rel_change(new_obj, obj) < hp.outer_tol:
            trace.converged = True
            break
        obj = new_obj

    if trace.stalled and not progressed:
        log.warning("solver stalled before making any progress")
    return state, trace
