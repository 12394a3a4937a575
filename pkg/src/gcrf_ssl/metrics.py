"""Support recovery by thresholding, and scoring against known truth."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .penalty import InclusionProbs


@dataclass(frozen=True)
class SupportPattern:
    theta_support: np.ndarray
    lambda_support: np.ndarray
    b_column_support: np.ndarray


@dataclass(frozen=True)
class ScoreReport:
    frob_theta: float
    frob_lambda: float
    frob_b: float
    mcc_theta: float
    mcc_lambda: float
    mcc_b: float
    mcc_b_columns: float

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        """One ``name=value`` line per metric, 6 significant digits."""
        return "".join(f"{k}={v:.6g}\n" for k, v in self.as_dict().items())


def recover_support(probs: InclusionProbs, t: float = 0.5) -> SupportPattern:
    theta_s = probs.p_theta > t
    lam_s = probs.p_lambda > t
    lam_s = lam_s | lam_s.T
    np.fill_diagonal(lam_s, True)
    return SupportPattern(theta_s, lam_s, theta_s.any(axis=1))


def mcc(tp, tn, fp, fn) -> float:
    """Matthews correlation coefficient; 0 when any marginal count is zero."""
    tp, tn, fp, fn = (int(v) for v in (tp, tn, fp, fn))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def confusion(pred, truth):
    pred = np.asarray(pred, dtype=bool).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    return tp, tn, fp, fn


def support_mcc(pred, truth) -> float:
    return mcc(*confusion(pred, truth))


def score(theta_hat, lam_hat, b_hat, probs: InclusionProbs, theta0, lam0, b0, t=0.5) -> ScoreReport:
    """Estimation error and support recovery of a fit against the generating truth.

    Precision support is scored on the strict upper triangle. Element support of
    ``B`` is the exact-nonzero pattern, so it mostly reflects column recovery.
    """
    pairs = [(theta_hat, theta0), (lam_hat, lam0), (b_hat, b0)]
    for est, tru in pairs:
        if np.shape(est) != np.shape(tru):
            raise ValueError(f"shape mismatch: {np.shape(est)} vs {np.shape(tru)}")
    theta0, lam0, b0 = (np.asarray(m, dtype=float) for m in (theta0, lam0, b0))
    b_hat = np.asarray(b_hat, dtype=float)
    sup = recover_support(probs, t)
    iu = np.triu_indices(lam0.shape[0], k=1)
    return ScoreReport(
        frob_theta=float(np.linalg.norm(np.asarray(theta_hat) - theta0)),
        frob_lambda=float(np.linalg.norm(np.asarray(lam_hat) - lam0)),
        frob_b=float(np.linalg.norm(b_hat - b0)),
        mcc_theta=support_mcc(sup.theta_support, theta0 != 0),
        mcc_lambda=support_mcc(sup.lambda_support[iu], lam0[iu] != 0),
        mcc_b=support_mcc(b_hat != 0, b0 != 0),
        mcc_b_columns=support_mcc(np.any(b_hat != 0, axis=0), np.any(b0 != 0, axis=0)),
    )
