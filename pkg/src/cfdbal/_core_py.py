"""Pure-numpy fallback for the compiled kernels in ``_core.pyx``."""

from __future__ import annotations

import numpy as np

BACKEND = "python"

# rows per block when broadcasting differences; bounds peak memory
_BLOCK = 256


def cross_sqeuclidean(X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    out = np.empty((X.shape[0], Y.shape[0]))
    for s in range(0, X.shape[0], _BLOCK):
        diff = X[s:s + _BLOCK, None, :] - Y[None, :, :]
        acc = np.zeros(out[s:s + _BLOCK].shape)
        # sequential accumulation over coordinates, same order as the C loop
        for k in range(X.shape[1]):
            acc += diff[:, :, k] * diff[:, :, k]
        out[s:s + _BLOCK] = acc
    return out


def cross_cityblock(X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    out = np.empty((X.shape[0], Y.shape[0]))
    for s in range(0, X.shape[0], _BLOCK):
        diff = np.abs(X[s:s + _BLOCK, None, :] - Y[None, :, :])
        acc = np.zeros(out[s:s + _BLOCK].shape)
        for k in range(X.shape[1]):
            acc += diff[:, :, k]
        out[s:s + _BLOCK] = acc
    return out


def _symmetrize_upper(D):
    iu = np.triu_indices(D.shape[0], 1)
    D[(iu[1], iu[0])] = D[iu]
    np.fill_diagonal(D, 0.0)
    return D


def pairwise_sqeuclidean(X):
    return _symmetrize_upper(cross_sqeuclidean(X, X))


def pairwise_cityblock(X):
    return _symmetrize_upper(cross_cityblock(X, X))


def admm_run(Minv, A, q, lA, uA, lB, uB, rho_a, rho_b, sigma, alpha,
             x, zA, zB, yA, yB, dyA, dyB, n_iter):
    """Run ``n_iter`` relaxed ADMM iterations in place (see ``_core.pyx``)."""
    for _ in range(int(n_iter)):
        rhs = sigma * x - q + rho_b * zB - yB
        if A.shape[0]:
            rhs += A.T @ (rho_a * zA - yA)
        xt = Minv @ rhs
        ztA = A @ xt
        x *= 1.0 - alpha
        x += alpha * xt

        r = alpha * ztA + (1.0 - alpha) * zA
        znew = np.clip(r + yA / rho_a, lA, uA)
        dyA[:] = rho_a * (r - znew)
        yA += dyA
        zA[:] = znew

        r = alpha * xt + (1.0 - alpha) * zB
        znew = np.clip(r + yB / rho_b, lB, uB)
        dyB[:] = rho_b * (r - znew)
        yB += dyB
        zB[:] = znew
