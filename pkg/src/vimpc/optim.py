"""Batched projected-gradient descent over boxes.

Every row of ``Z`` is an independent problem ``min_z fun(z)`` subject to
``lower <= z <= upper``. ``fun(Z, rows)`` evaluates the rows ``Z`` of the
problems indexed by ``rows`` and must be vectorized over the first axis.

Gradients are central finite differences unless a ``grad(Z, rows)``
callable is supplied. Step lengths follow the
Barzilai-Borwein rule with an Armijo backtracking test along the projection
arc; ``memory > 1`` turns the test nonmonotone (reference value is the max of
the last ``memory`` accepted objectives).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FD_STEP = 1e-6
ARMIJO = 1e-4
MAX_BACKTRACKS = 60


@dataclass
class DescentResult:
    z: np.ndarray
    f: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    grad_norm: np.ndarray


def fd_gradient(fun, Z, rows, h=FD_STEP):
    """Central-difference gradients of the rows ``Z`` (shape ``(k, d)``)."""
    k, d = Z.shape
    E = np.eye(d) * h
    Zp = np.concatenate([Z[:, None, :] + E, Z[:, None, :] - E], axis=1)  # (k, 2d, d)
    F = fun(Zp.reshape(k * 2 * d, d), np.repeat(rows, 2 * d)).reshape(k, 2 * d)
    return (F[:, :d] - F[:, d:]) / (2 * h)


def projected_gradient(fun, Z0, lower, upper, *, tol, max_iter, memory=1, h=FD_STEP,
                       relative_tol=True, grad=None) -> DescentResult:
    if grad is None:
        def grad(Z, rows):
            return fd_gradient(fun, Z, rows, h)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    Z = np.clip(np.array(Z0, dtype=float), lower, upper)
    B, d = Z.shape
    all_rows = np.arange(B)

    F = fun(Z, all_rows)
    if not np.all(np.isfinite(F)):
        raise FloatingPointError("non-finite objective at the initial point")
    G = grad(Z, all_rows)
    hist = np.repeat(F[:, None], memory, axis=1)
    z_best, f_best = Z.copy(), F.copy()

    # initial step: a unit projected-gradient move, capped to the box scale
    width = np.max(upper - lower) if np.all(np.isfinite(upper - lower)) else 1.0
    gmax = np.max(np.abs(G), axis=1)
    alpha = np.where(gmax > 0, np.minimum(1.0, width / np.maximum(gmax, 1e-300)), 1.0)

    iterations = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    active = np.ones(B, dtype=bool)
    grad_norm = np.zeros(B)

    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        pg = np.clip(Z[idx] - G[idx], lower, upper) - Z[idx]
        grad_norm[idx] = np.linalg.norm(pg, axis=1)
        scale = 1.0 + np.abs(F[idx]) if relative_tol else 1.0
        done = grad_norm[idx] <= tol * scale
        converged[idx[done]] = True
        capped = ~done & (iterations[idx] >= max_iter)
        active[idx[done | capped]] = False
        idx = idx[~(done | capped)]
        if idx.size == 0:
            break

        ref = np.max(hist[idx], axis=1)
        pending = idx.copy()
        accepted = np.zeros(B, dtype=bool)
        Z_new = Z.copy()
        F_new = F.copy()
        for _ in range(MAX_BACKTRACKS):
            if pending.size == 0:
                break
            Zt = np.clip(Z[pending] - alpha[pending, None] * G[pending], lower, upper)
            Ft = fun(Zt, pending)
            decrease = np.sum(G[pending] * (Zt - Z[pending]), axis=1)
            ok = np.isfinite(Ft) & (Ft <= ref[np.searchsorted(idx, pending)] + ARMIJO * decrease)
            Z_new[pending[ok]] = Zt[ok]
            F_new[pending[ok]] = Ft[ok]
            accepted[pending[ok]] = True
            alpha[pending[~ok]] *= 0.5
            pending = pending[~ok]
        # no acceptable step: stationary to the resolution of the gradient
        if pending.size:
            converged[pending] = True
            active[pending] = False

        acc = np.flatnonzero(accepted)
        if acc.size == 0:
            continue
        G_new = grad(Z_new[acc], acc)
        s = Z_new[acc] - Z[acc]
        y = G_new - G[acc]
        sy = np.sum(s * y, axis=1)
        ss = np.sum(s * s, axis=1)
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 2.0 * alpha[acc])
        alpha[acc] = np.clip(bb, 1e-12, 1e12)
        Z[acc], F[acc], G[acc] = Z_new[acc], F_new[acc], G_new
        hist[acc] = np.concatenate([hist[acc, 1:], F[acc, None]], axis=1)
        iterations[acc] += 1
        better = F[acc] < f_best[acc]
        z_best[acc[better]] = Z[acc[better]]
        f_best[acc[better]] = F[acc[better]]

    return DescentResult(z_best, f_best, converged, iterations, grad_norm)
