"""Pure-numpy fallback implementations of the hot simulation kernels.

Both backends share one contract: gradient noise is pre-drawn by the caller
(one stream per replication), so a kernel is a deterministic function of its
inputs and the two backends are interchangeable. States of replications that
cross the divergence threshold are frozen and their remaining outputs set to
NaN; the first offending update index is reported per replication.

Update index ``t`` corresponds to the iterate produced by update ``t``
counting from zero, i.e. the recursion index ``n`` of the escaping-efficiency
series (the initial condition sits at ``n = -1``).
"""

from __future__ import annotations

import numpy as np

ALG_CENTRALIZED = 0
ALG_CONSENSUS = 1
ALG_DIFFUSION = 2


def simulate_quadratic(w0, A, H, w_loc, h_bar, w_star, noise, mu, alg,
                       div_threshold):
    """Quadratic-network recursion for a chunk of replications.

    Parameters
    ----------
    w0 : (R, K, M) initial iterates (rows identical for the centralized case)
    A : (K, K) combination matrix
    H : (K, M, M) per-agent Hessians
    w_loc : (K, M) per-agent minimizers
    h_bar : (M, M) global Hessian (excess-risk metric)
    w_star : (M,) aggregate minimizer
    noise : (R, n, K, M) pre-drawn gradient-noise realizations
    mu : (n,) per-update step sizes
    alg : ALG_* code
    div_threshold : divergence threshold on |entry|

    Returns
    -------
    er : (R, n) network-average excess risk after each update
    cons : (R, n) consensus distance after each update
    diverged_at : (R,) first diverged update index, -1 if none
    """
    R, n, K, M = noise.shape
    er = np.empty((R, n))
    cons = np.empty((R, n))
    diverged_at = np.full(R, -1, dtype=np.int64)
    alive = np.ones(R, dtype=bool)

    if alg == ALG_CENTRALIZED:
        w = w0[:, 0].copy()  # (R, M)
        for t in range(n):
            delta = w[:, None, :] - w_loc[None]
            grad = np.einsum("kmn,rkn->rkm", H, delta)
            ghat = grad + noise[:, t]
            w = w - mu[t] * ghat.mean(axis=1)
            newly = alive & (np.abs(w).max(axis=1) > div_threshold)
            if newly.any():
                diverged_at[newly] = t
                alive &= ~newly
                w[~alive] = w_star
            dv = w - w_star
            er[:, t] = 0.5 * np.einsum("rm,mn,rn->r", dv, h_bar, dv)
            cons[:, t] = 0.0
    else:
        w = w0.copy()  # (R, K, M)
        for t in range(n):
            grad = np.einsum("kmn,rkn->rkm", H, w - w_loc[None])
            ghat = grad + noise[:, t]
            if alg == ALG_DIFFUSION:
                phi = w - mu[t] * ghat
                w = np.einsum("lk,rlm->rkm", A, phi)
            else:  # consensus: combine previous iterates, correct at own iterate
                phi = np.einsum("lk,rlm->rkm", A, w)
                w = phi - mu[t] * ghat
            newly = alive & (np.abs(w).max(axis=(1, 2)) > div_threshold)
            if newly.any():
                diverged_at[newly] = t
                alive &= ~newly
                w[~alive] = w_star
            dv = w - w_star
            er[:, t] = 0.5 * np.einsum("rkm,mn,rkn->r", dv, h_bar, dv) / K
            centered = w - w.mean(axis=1, keepdims=True)
            cons[:, t] = np.einsum("rkm,rkm->r", centered, centered)

    _mask_after_divergence(er, cons, diverged_at)
    return er, cons, diverged_at


def simulate_double_well(w0, A, b, noise, mu, alg, j_star, basin_lo, basin_hi,
                         div_threshold):
    """Tilted double-well recursion for a chunk of replications.

    Parameters mirror :func:`simulate_quadratic` with scalar states:
    ``w0`` is (R, K), ``noise`` is (R, n, K), ``b`` the (K,) tilts. Escape is
    detected when the network centroid leaves the open basin interval
    ``(basin_lo, basin_hi)``.

    Returns ``(er, cons, escaped_at, diverged_at)``.
    """
    R, n, K = noise.shape
    er = np.empty((R, n))
    cons = np.empty((R, n))
    escaped_at = np.full(R, -1, dtype=np.int64)
    diverged_at = np.full(R, -1, dtype=np.int64)
    alive = np.ones(R, dtype=bool)

    if alg == ALG_CENTRALIZED:
        w = w0[:, 0].copy()  # (R,)
        for t in range(n):
            ghat = 4.0 * w * (w * w - 1.0) + b.mean() + noise[:, t].mean(axis=1)
            w = w - mu[t] * ghat
            newly = alive & (np.abs(w) > div_threshold)
            if newly.any():
                diverged_at[newly] = t
                alive &= ~newly
                w[~alive] = 1.0
            er[:, t] = (w * w - 1.0) ** 2 - j_star
            cons[:, t] = 0.0
            exited = (escaped_at < 0) & alive & ((w <= basin_lo) | (w >= basin_hi))
            escaped_at[exited] = t
    else:
        w = w0.copy()  # (R, K)
        for t in range(n):
            ghat = 4.0 * w * (w * w - 1.0) + b[None, :] + noise[:, t]
            if alg == ALG_DIFFUSION:
                w = (w - mu[t] * ghat) @ A
            else:
                w = w @ A - mu[t] * ghat
            newly = alive & (np.abs(w).max(axis=1) > div_threshold)
            if newly.any():
                diverged_at[newly] = t
                alive &= ~newly
                w[~alive] = 1.0
            sq = w * w - 1.0
            er[:, t] = (sq * sq).mean(axis=1) - j_star
            centered = w - w.mean(axis=1, keepdims=True)
            cons[:, t] = (centered * centered).sum(axis=1)
            centroid = w.mean(axis=1)
            exited = ((escaped_at < 0) & alive
                      & ((centroid <= basin_lo) | (centroid >= basin_hi)))
            escaped_at[exited] = t

    _mask_after_divergence(er, cons, diverged_at)
    return er, cons, escaped_at, diverged_at


def _mask_after_divergence(er, cons, diverged_at):
    for r in np.flatnonzero(diverged_at >= 0):
        t = diverged_at[r]
        er[r, t:] = np.nan
        cons[r, t:] = np.nan
