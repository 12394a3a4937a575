"""Compiled coordinate pass used by the M-step.

Mirrors ``theta_coefficients``, ``lambda_offdiag_coefficients`` and
``lambda_diag_coefficients`` in ``solver``; tests keep the two in agreement.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _lasso(a, b, c, tau):
    z = c - b / a
    kappa = tau / a
    if z > kappa:
        return -c + z - kappa
    if z < -kappa:
        return -c + z + kappa
    return -c


@numba.njit(cache=True)
def sweep(ti, tj, li, lj, theta, lam, w, k, am, c1, s_xx, s_yy, n, tau_theta, tau_lambda,
          d_theta, d_lambda, u, v):
    q, p = theta.shape
    skipped = 0

    for t in range(ti.shape[0]):
        i = ti[t]
        j = tj[t]
        a = n * w[j, j] * s_xx[i, i]
        if not a > 0.0:
            skipped += 1
            continue
        kv = 0.0
        for m in range(p):
            kv += k[i, m] * v[m, j]
        su = 0.0
        for m in range(q):
            su += s_xx[i, m] * u[m, j]
        b = n * (c1[i, j] - kv + su)
        c = theta[i, j] + d_theta[i, j]
        step = _lasso(a, b, c, tau_theta[i, j])
        if step != 0.0:
            d_theta[i, j] += step
            for m in range(p):
                u[i, m] += step * w[j, m]

    for t in range(li.shape[0]):
        i = li[t]
        j = lj[t]
        a = n * (w[i, j] ** 2 + w[i, i] * w[j, j] + 2.0 * w[i, j] * am[i, j]
                 + w[i, i] * am[j, j] + w[j, j] * am[i, i])
        if not a > 0.0:
            skipped += 1
            continue
        cross = 0.0
        for m in range(q):
            cross += u[m, i] * k[m, j] + u[m, j] * k[m, i]
        wv = 0.0
        va = 0.0
        for m in range(p):
            wv += w[i, m] * v[m, j]
            va += v[m, i] * am[m, j] + v[m, j] * am[m, i]
        b = -n * (w[i, j] - s_yy[i, j] + am[i, j] + cross - wv - va)
        c = lam[i, j] + d_lambda[i, j]
        step = _lasso(a, b, c, tau_lambda[i, j])
        if step != 0.0:
            d_lambda[i, j] += step
            d_lambda[j, i] += step
            for m in range(p):
                v[i, m] += step * w[j, m]
                v[j, m] += step * w[i, m]

    for i in range(p):
        a = n * (w[i, i] ** 2 + 2.0 * w[i, i] * am[i, i])
        if not a > 0.0:
            skipped += 1
            continue
        cross = 0.0
        for m in range(q):
            cross += u[m, i] * k[m, i]
        wv = 0.0
        va = 0.0
        for m in range(p):
            wv += w[i, m] * v[m, i]
            va += v[m, i] * am[m, i]
        b = -n * (w[i, i] - s_yy[i, i] + am[i, i] + 2.0 * cross - wv - 2.0 * va)
        step = -b / a
        if step != 0.0:
            d_lambda[i, i] += step
            for m in range(p):
                v[i, m] += step * w[i, m]

    return skipped


def warmup():
    """Trigger compilation on a 1x1 problem."""
    z = np.zeros((1, 1))
    one = np.ones((1, 1))
    idx = np.zeros(1, dtype=np.int64)
    sweep(idx, idx, idx[:0], idx[:0], z.copy(), one.copy(), one.copy(), z.copy(), z.copy(),
          z.copy(), one.copy(), one.copy(), 1.0, z.copy(), z.copy(),
          z.copy(), z.copy(), z.copy(), z.copy())
