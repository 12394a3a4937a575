"""Problem dimensions, sufficient statistics, solver state and hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a precision matrix fails its Cholesky factorization."""


@dataclass(frozen=True)
class ProblemDims:
    n: int
    p: int
    q: int

    def __post_init__(self):
        for name in ("n", "p", "q"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")


@dataclass(frozen=True)
class SufficientStats:
    """Second moments ``S_yy = Y'Y/n``, ``S_xy = X'Y/n`` and ``S_xx = X'X/n``."""

    s_yy: np.ndarray
    s_xy: np.ndarray
    s_xx: np.ndarray
    dims: ProblemDims

    def __post_init__(self):
        n, p, q = self.dims.n, self.dims.p, self.dims.q
        if self.s_yy.shape != (p, p) or self.s_xy.shape != (q, p) or self.s_xx.shape != (q, q):
            raise ValueError(
                f"moment shapes {self.s_yy.shape}, {self.s_xy.shape}, {self.s_xx.shape} "
                f"do not match p={p}, q={q}"
            )

    @property
    def n(self) -> int:
        return self.dims.n


def compute_sufficient_stats(x, y, center=False) -> SufficientStats:
    """Build the sample moment matrices from an ``n x q`` design and ``n x p`` responses.

    With ``center=True`` both matrices are column-centered first. Outputs of
    ``S_yy`` and ``S_xx`` are explicitly symmetrized.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"row count mismatch: x has {x.shape[0]} rows, y has {y.shape[0]}")
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one observation")
    if center:
        x = x - x.mean(axis=0)
        y = y - y.mean(axis=0)
    s_yy = y.T @ y / n
    s_xx = x.T @ x / n
    s_xy = x.T @ y / n
    return SufficientStats(
        s_yy=0.5 * (s_yy + s_yy.T),
        s_xy=s_xy,
        s_xx=0.5 * (s_xx + s_xx.T),
        dims=ProblemDims(n=n, p=y.shape[1], q=x.shape[1]),
    )


def cholesky(lam):
    """Lower Cholesky factor of ``lam``; raises NotPositiveDefiniteError."""
    try:
        return linalg.cholesky(lam, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(str(exc)) from None


def is_positive_definite(lam) -> bool:
    try:
        cholesky(lam)
    except NotPositiveDefiniteError:
        return False
    return True


@dataclass
class ModelState:
    theta: np.ndarray
    lam: np.ndarray
    lam_inv: np.ndarray = field(default=None, repr=False)
    chol: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        if self.lam_inv is None or self.chol is None:
            self.refresh()

    def refresh(self):
        """Recompute the Cholesky factor and the cached inverse of ``lam``."""
        self.chol = cholesky(self.lam)
        p = self.lam.shape[0]
        inv = linalg.cho_solve((self.chol, True), np.eye(p))
        self.lam_inv = 0.5 * (inv + inv.T)

    @property
    def p(self) -> int:
        return self.lam.shape[0]

    @property
    def q(self) -> int:
        return self.theta.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def copy(self) -> "ModelState":
        return ModelState(self.theta.copy(), self.lam.copy(), self.lam_inv.copy(), self.chol.copy())


def initialize_state(dims: ProblemDims) -> ModelState:
    """Zero cross-precision and identity response precision."""
    eye = np.eye(dims.p)
    return ModelState(np.zeros((dims.q, dims.p)), eye.copy(), eye.copy(), eye.copy())


def spectral_norm(mat, tol=1e-6, max_iter=50) -> float:
    """Largest absolute eigenvalue of a symmetric matrix by power iteration."""
    mat = np.asarray(mat, dtype=float)
    # deterministic start vector with no zero components
    v = np.ones(mat.shape[0]) + 1e-3 * np.arange(mat.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = mat @ v
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est


@dataclass(frozen=True)
class Hyperparams:
    """Prior scales, mixture weights and solver tolerances.

    ``nu0_*`` is the spike (narrow) Laplace scale and ``nu1_*`` the slab scale.
    ``eta_*`` is the element-level slab weight, ``rho`` the row-level slab
    weight for the cross-precision, ``spectral_bound_r`` the bound on the
    spectral norm of the response precision.
    """

    nu0_theta: float = 0.01
    nu1_theta: float = 1.0
    nu0_lambda: float = 0.01
    nu1_lambda: float = 1.0
    eta_theta: float = 0.5
    eta_lambda: float = 0.5
    rho: float = 0.5
    spectral_bound_r: float = 1e6
    threshold_t: float = 0.5
    outer_tol: float = 1e-5
    inner_tol: float = 1e-6
    max_outer_iters: int = 100
    max_inner_iters: int = 50

    def __post_init__(self):
        for which in ("theta", "lambda"):
            nu0 = getattr(self, f"nu0_{which}")
            nu1 = getattr(self, f"nu1_{which}")
            if not (0 < nu0 < nu1):
                raise ValueError(f"need 0 < nu0_{which} < nu1_{which}, got {nu0}, {nu1}")
            eta = getattr(self, f"eta_{which}")
            if not (0 < eta < 1):
                raise ValueError(f"eta_{which} must lie in (0, 1), got {eta}")
        if not (0 < self.rho <= 1):
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if not self.spectral_bound_r > 0:
            raise ValueError("spectral_bound_r must be positive")
        if not (0 <= self.threshold_t <= 1):
            raise ValueError("threshold_t must lie in [0, 1]")
        if not (self.outer_tol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (self.max_outer_iters >= 1 and self.max_inner_iters >= 1):
            raise ValueError("iteration limits must be positive")

    @classmethod
    def scaled(cls, n, p, q, spike=1.0, **kwargs) -> "Hyperparams":
        """Spike scale shrinking like ``1 / sqrt(n log(p + q))``."""
        nu0 = spike / math.sqrt(n * math.log(max(p + q, 3)))
        kwargs.setdefault("nu0_theta", nu0)
        kwargs.setdefault("nu0_lambda", nu0)
        return cls(**kwargs)
