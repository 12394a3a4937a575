"""Response prediction from a fitted model and K-fold tuning of the prior scales."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .coef import BEstimate, estimate_b
from .model import Hyperparams, ModelState, cholesky, compute_sufficient_stats
from .solver import SolverConfig, fit


@dataclass(frozen=True)
class PredictionTask:
    """Test covariates plus the responses already observed.

    ``y_known`` is an ``m x p`` array whose entries are read only where
    ``known_mask`` is true.
    """

    x_test: np.ndarray
    known_mask: np.ndarray
    y_known: np.ndarray

    def __post_init__(self):
        m = np.shape(self.x_test)[0]
        if np.shape(self.known_mask)[0] != m or np.shape(self.known_mask) != np.shape(self.y_known):
            raise ValueError(
                f"mask {np.shape(self.known_mask)} and known values {np.shape(self.y_known)} "
                f"must both have {m} rows and the same shape"
            )


def _b_matrix(b):
    return b.b if isinstance(b, BEstimate) else np.asarray(b, dtype=float)


def predict_unconditional(b, x_test):
    """Conditional mean ``B x`` for every test row."""
    bm = _b_matrix(b)
    x_test = np.atleast_2d(np.asarray(x_test, dtype=float))
    if x_test.shape[1] != bm.shape[1]:
        raise ValueError(f"x_test has {x_test.shape[1]} columns, B expects {bm.shape[1]}")
    return x_test @ bm.T


def predict_conditional(state: ModelState, b, task: PredictionTask):
    """Fill the unknown responses with their Gaussian conditional mean given the known ones.

    With mean ``mu = B x`` and precision ``Lambda`` the unknown block is
    ``mu_u - Lambda_uu^{-1} Lambda_uk (y_k - mu_k)``. Rows sharing a mask pattern
    share one Cholesky factorization.
    """
    mu = predict_unconditional(b, task.x_test)
    mask = np.asarray(task.known_mask, dtype=bool)
    if mask.shape != mu.shape:
        raise ValueError(f"mask shape {mask.shape} does not match predictions {mu.shape}")
    y_known = np.asarray(task.y_known, dtype=float)
    out = mu.copy()
    out[mask] = y_known[mask]
    patterns, inverse = np.unique(mask, axis=0, return_inverse=True)
    inverse = np.ravel(inverse)
    lam = state.lam
    for k, pattern in enumerate(patterns):
        rows = np.flatnonzero(inverse == k)
        unk, kn = ~pattern, pattern
        if not unk.any() or not kn.any():
            continue
        chol = cholesky(lam[np.ix_(unk, unk)])
        resid = y_known[np.ix_(rows, kn)] - mu[np.ix_(rows, kn)]
        shift = linalg.cho_solve((chol, True), lam[np.ix_(unk, kn)] @ resid.T).T
        out[np.ix_(rows, unk)] = mu[np.ix_(rows, unk)] - shift
    return out


def prediction_error(y_true, y_pred, mask=None) -> float:
    """Mean over rows of the Euclidean norm of the residual.

    ``mask`` marks the positions to score (the unknown ones); others are ignored.
    """
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    y_pred = np.atleast_2d(np.asarray(y_pred, dtype=float))
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    resid = y_true - y_pred
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != resid.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {resid.shape}")
        resid = np.where(mask, resid, 0.0)
    return float(np.mean(np.linalg.norm(resid, axis=1)))


@dataclass
class CvPlan:
    grid: list
    k: int = 5
    scoring: str = "prediction_error"
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least two folds")
        if not self.grid:
            raise ValueError("empty hyperparameter grid")
        if self.scoring != "prediction_error":
            raise ValueError(f"unsupported scoring {self.scoring!r}")


def default_grid(**fixed) -> list:
    """Spike scales {5e-4, 1e-3, 5e-3, 1e-2, 5e-2} with slab 1 and weights 0.5."""
    return [Hyperparams(nu0_theta=v, nu0_lambda=v, **fixed) for v in (0.0005, 0.001, 0.005, 0.01, 0.05)]


def fold_indices(n, k, seed=0) -> list:
    """Contiguous blocks of a seeded permutation of ``range(n)``."""
    if n < k:
        raise ValueError(f"need n >= k, got n={n}, k={k}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(block) for block in np.array_split(perm, k)]


def _fold_error(args):
    x, y, train, test, hp, solver = args
    stats = compute_sufficient_stats(x[train], y[train])
    state, _, _ = fit(stats, hp, solver)
    b = estimate_b(state, x[train], y[train])
    return prediction_error(y[test], predict_unconditional(b, x[test]))


@dataclass
class CvResult:
    best: Hyperparams
    best_index: int
    mean_errors: list = field(default_factory=list)
    fold_errors: list = field(default_factory=list)


def cross_validate(x, y, plan: CvPlan, solver: SolverConfig = None, jobs=1) -> CvResult:
    """Pick the grid candidate with the smallest mean held-out prediction error.

    Ties go to the earliest candidate in grid order.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = fold_indices(len(x), plan.k, plan.seed)
    all_idx = np.arange(len(x))
    tasks = []
    for hp in plan.grid:
        for test in folds:
            train = np.setdiff1d(all_idx, test)
            tasks.append((x, y, train, test, hp, solver))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            errs = list(pool.map(_fold_error, tasks))
    else:
        errs = [_fold_error(t) for t in tasks]
    per = np.array(errs).reshape(len(plan.grid), plan.k)
    means = per.mean(axis=1)
    best = int(np.argmin(means))
    return CvResult(plan.grid[best], best, means.tolist(), per.tolist())
