"""Synthetic GCRF instances with sparse ``Theta`` rows and a sparse response precision."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .coef import estimate_b
from .metrics import ScoreReport, score
from .model import Hyperparams, cholesky, compute_sufficient_stats
from .solver import SolverConfig, fit

_MASK64 = (1 << 64) - 1


class ThetaMethod(str, enum.Enum):
    INDEPENDENT_UNIFORM = "independent"
    SPHERE_ROWS = "sphere"


@dataclass(frozen=True)
class SimConfig:
    p: int = 10
    q: int = 50
    n: int = 200
    s_lambda: int = 5
    theta_method: ThetaMethod = ThetaMethod.INDEPENDENT_UNIFORM
    s_theta: int = 10
    s_theta_scope: str = "row"
    row_norm: float = 0.5
    zero_row_fraction: float = 0.7
    signal_range: tuple = (0.1, 0.2)
    toeplitz_offdiag: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta_method", ThetaMethod(self.theta_method))
        object.__setattr__(self, "signal_range", tuple(float(v) for v in self.signal_range))
        if min(self.p, self.q, self.n) < 1:
            raise ValueError("p, q and n must be positive")
        if not 0 <= self.s_lambda <= self.p * (self.p - 1) // 2:
            raise ValueError(f"s_lambda must be in [0, p(p-1)/2], got {self.s_lambda}")
        if self.s_theta_scope not in ("row", "total"):
            raise ValueError(f"s_theta_scope must be 'row' or 'total', got {self.s_theta_scope!r}")
        live = self.q - math.ceil(self.zero_row_fraction * self.q - 1e-12)
        limit = self.p if self.s_theta_scope == "row" else self.p * live
        if self.theta_method is ThetaMethod.INDEPENDENT_UNIFORM and not 0 <= self.s_theta <= limit:
            raise ValueError(f"s_theta must be in [0, {limit}], got {self.s_theta}")
        if not 0 <= self.zero_row_fraction <= 1:
            raise ValueError("zero_row_fraction must lie in [0, 1]")
        lo, hi = self.signal_range
        if not 0 < lo < hi:
            raise ValueError(f"signal_range needs 0 < lo < hi, got {self.signal_range}")
        if not self.row_norm > 0:
            raise ValueError("row_norm must be positive")


SETUPS = {
    "setup1": dict(p=10, q=50, s_lambda=5, theta_method="independent", s_theta=10,
                   s_theta_scope="total", signal_range=(0.1, 0.2)),
    "setup2": dict(p=10, q=50, s_lambda=5, theta_method="sphere", row_norm=0.5,
                   signal_range=(0.1, 0.2)),
    "setup3": dict(p=50, q=100, s_lambda=100, theta_method="sphere", row_norm=0.5,
                   signal_range=(0.1, 0.2)),
    "s1": dict(p=10, q=50, s_lambda=5, theta_method="independent", s_theta=10,
               s_theta_scope="total", signal_range=(4.0, 6.0)),
    "s2": dict(p=10, q=50, s_lambda=5, theta_method="sphere", row_norm=4.0,
               signal_range=(4.0, 6.0)),
}


def setup_config(name: str, **overrides) -> SimConfig:
    try:
        base = SETUPS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown setup {name!r}; expected one of {sorted(SETUPS)}") from None
    return SimConfig(**{**base, **overrides})


def splitmix64(state: int):
    """One SplitMix64 step: returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def replication_seed(master_seed: int, r: int) -> int:
    """Seed of replication ``r``: the ``(r+1)``-th SplitMix64 output from ``master_seed``."""
    state = int(master_seed) & _MASK64
    for _ in range(r + 1):
        state, out = splitmix64(state)
    return out


def gen_omega_xx(q, offdiag=0.3):
    """Tridiagonal Toeplitz covariate precision with unit diagonal."""
    if abs(offdiag) >= 0.5:
        raise ValueError(f"|offdiag| must be < 0.5 for guaranteed positive definiteness, got {offdiag}")
    omega = np.eye(q)
    idx = np.arange(q - 1)
    omega[idx, idx + 1] = offdiag
    omega[idx + 1, idx] = offdiag
    return omega


def _signed_uniform(rng, size, lo, hi):
    return rng.choice([-1.0, 1.0], size=size) * rng.uniform(lo, hi, size=size)


def gen_lambda0(p, s_lambda, signal_range, rng):
    lo, hi = signal_range
    lam = np.zeros((p, p))
    iu = np.triu_indices(p, k=1)
    if s_lambda:
        pick = rng.choice(len(iu[0]), size=s_lambda, replace=False)
        lam[iu[0][pick], iu[1][pick]] = _signed_uniform(rng, s_lambda, lo, hi)
        lam = lam + lam.T
    np.fill_diagonal(lam, np.abs(lam).sum(axis=1) + 0.2)
    return lam


def gen_theta0(config: SimConfig, rng):
    """Cross-precision with ``ceil(zero_row_fraction * q)`` rows forced to zero.

    Independent-uniform entries are placed ``s_theta`` per remaining row
    (``s_theta_scope="row"``) or ``s_theta`` in total over the remaining rows
    (``"total"``, in which case some of those rows may stay empty).
    """
    p, q = config.p, config.q
    theta = np.zeros((q, p))
    n_zero = math.ceil(config.zero_row_fraction * q - 1e-12)
    zero_rows = rng.choice(q, size=n_zero, replace=False)
    live = np.setdiff1d(np.arange(q), zero_rows)
    lo, hi = config.signal_range
    if config.theta_method is ThetaMethod.INDEPENDENT_UNIFORM and config.s_theta_scope == "total":
        cells = rng.choice(len(live) * p, size=config.s_theta, replace=False)
        rows, cols = live[cells // p], cells % p
        theta[rows, cols] = _signed_uniform(rng, config.s_theta, lo, hi)
        return theta
    for i in live:
        if config.theta_method is ThetaMethod.INDEPENDENT_UNIFORM:
            cols = rng.choice(p, size=config.s_theta, replace=False)
            theta[i, cols] = _signed_uniform(rng, config.s_theta, lo, hi)
        else:
            kmin = max(1, math.ceil(0.1 * p))
            kmax = max(kmin, math.floor(0.5 * p))
            k = int(rng.integers(kmin, kmax + 1))
            cols = rng.choice(p, size=k, replace=False)
            z = rng.standard_normal(k)
            theta[i, cols] = config.row_norm * z / np.linalg.norm(z)
    return theta


@dataclass(frozen=True)
class Truth:
    theta: np.ndarray
    lam: np.ndarray
    b: np.ndarray


def _gaussian_rows(rng, n, precision):
    """Rows ``~ N(0, precision^{-1})`` through the Cholesky factor of the precision."""
    chol = cholesky(precision)
    z = rng.standard_normal((n, precision.shape[0]))
    return linalg.solve_triangular(chol.T, z.T, lower=False).T


def gen_truth(config: SimConfig, rng) -> Truth:
    lam0 = gen_lambda0(config.p, config.s_lambda, config.signal_range, rng)
    theta0 = gen_theta0(config, rng)
    b0 = -linalg.cho_solve((cholesky(lam0), True), theta0.T)
    return Truth(theta0, lam0, b0)


def gen_dataset(config: SimConfig, rng=None, truth: Truth = None):
    """Draw ``(x, y, truth)``; ``y = x B0' + e`` with ``e ~ N(0, Lambda0^{-1})``."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if truth is None:
        truth = gen_truth(config, rng)
    x = _gaussian_rows(rng, config.n, gen_omega_xx(config.q, config.toeplitz_offdiag))
    y = x @ truth.b.T + _gaussian_rows(rng, config.n, truth.lam)
    return x, y, truth


@dataclass(frozen=True)
class ReplicationResult:
    rep: int
    seed: int
    report: ScoreReport
    converged: bool
    outer_iters: int


def run_one(config: SimConfig, hp: Hyperparams, solver: SolverConfig = None, rep: int = 0,
            threshold=None, truth: Truth = None) -> ReplicationResult:
    rng = np.random.default_rng(config.seed)
    x, y, truth = gen_dataset(config, rng, truth)
    stats = compute_sufficient_stats(x, y)
    state, probs, trace = fit(stats, hp, solver)
    b = estimate_b(state, x, y)
    t = hp.threshold_t if threshold is None else threshold
    report = score(state.theta, state.lam, b.b, probs, truth.theta, truth.lam, truth.b, t)
    return ReplicationResult(rep, config.seed, report, trace.converged, trace.outer_iters_used)


@dataclass
class Aggregate:
    results: list = field(default_factory=list)

    def mean(self) -> dict:
        keys = self.results[0].report.as_dict().keys()
        return {k: float(np.mean([getattr(r.report, k) for r in self.results])) for k in keys}

    def stderr(self) -> dict:
        keys = self.results[0].report.as_dict().keys()
        out = {}
        for k in keys:
            vals = np.array([getattr(r.report, k) for r in self.results])
            out[k] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        return out


def _run_rep(args):
    return run_one(*args)


def run_replications(config: SimConfig, hp: Hyperparams, solver: SolverConfig = None, reps=20,
                     jobs=1, fix_truth=False, threshold=None) -> Aggregate:
    """Generate, fit, estimate ``B`` and score ``reps`` independent instances.

    Replication ``r`` uses ``replication_seed(config.seed, r)``. With
    ``fix_truth`` the generating matrices come from the master seed and only
    the data are redrawn.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    truth = gen_truth(config, np.random.default_rng(config.seed)) if fix_truth else None
    tasks = [(replace(config, seed=replication_seed(config.seed, r)), hp, solver, r, threshold, truth)
             for r in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_rep, tasks))
    else:
        results = [_run_rep(t) for t in tasks]
    return Aggregate(results)
