"""Exact first/second-moment propagation of the linear error recursion.

The stacked error ``X_n = col{w_star - w_{k,n}}`` of the frozen-Hessian
recursion evolves as ``X_n = C X_{n-1} + mu A2 d + mu A2 s_n`` with
``C = A2 (A1 - mu H)`` built from Kronecker-extended combination matrices and
the block-diagonal Hessian at the minimizer. For state-independent noise the
mean and covariance therefore obey exact recursions, and the excess-risk
series

    er(n) = 1/(2K) (Tr((I (x) Hbar) cov_n) + mean_n^T (I (x) Hbar) mean_n)

is the exact law of the short-term model - and of the true algorithm when
the risks are quadratic. This module never touches the eigenbasis of the
combination matrix, so agreement with the closed-form predictions doubles as
a check of their spectral reduction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import algorithm_matrices
from .exceptions import DriftLabError, NonConvergenceError
from .risk_models import LocalMinimumInfo
from .topology import CombinationMatrix

COV_FIXED_POINT_TOL = 1e-13
COV_FIXED_POINT_BUDGET = 2_000_000


@dataclass(frozen=True)
class MomentState:
    """Mean and covariance of the stacked error vector at one step."""

    mean: np.ndarray   # (KM,)
    cov: np.ndarray    # (KM, KM)
    n: int


@dataclass(frozen=True)
class OracleSeries:
    n: np.ndarray
    er: np.ndarray
    final: MomentState
    spectral_radius: float


@dataclass(frozen=True)
class _StackedSystem:
    C: np.ndarray
    drive: np.ndarray      # mu A2 d
    noise_cov: np.ndarray  # mu^2 A2 (R_s / B) A2^T
    weight: np.ndarray     # I_K (x) Hbar
    K: int
    M: int


def _build_system(info: LocalMinimumInfo, A, alg: str, mu: float,
                  B: int) -> _StackedSystem:
    K, M = info.K, info.M
    if isinstance(A, CombinationMatrix):
        A = A.A
    A_arr = np.asarray(A, dtype=float) if A is not None else np.full((K, K), 1.0 / K)
    A1, A2 = algorithm_matrices(alg, A_arr)
    eye_m = np.eye(M)
    # combination acts on stacked vectors as (A^T (x) I_M)
    A1s = np.kron(A1.T, eye_m)
    A2s = np.kron(A2.T, eye_m)
    H = np.zeros((K * M, K * M))
    R = np.zeros((K * M, K * M))
    for k in range(K):
        sl = slice(k * M, (k + 1) * M)
        H[sl, sl] = info.H_k_star[k]
        R[sl, sl] = info.R_s_blocks[k] / B
    C = A2s @ (A1s - mu * H)
    drive = mu * (A2s @ info.d_stacked)
    noise_cov = mu * mu * (A2s @ R @ A2s.T)
    weight = np.kron(np.eye(K), info.H_bar)
    return _StackedSystem(C=C, drive=drive, noise_cov=noise_cov,
                          weight=weight, K=K, M=M)


def spectral_radius(C: np.ndarray, tol: float = 1e-10,
                    max_iter: int = 20_000) -> float:
    """Power-iteration estimate of the spectral radius of a square matrix.

    Tracks the geometric mean of recent norm growth ratios, which converges
    for complex-pair dominated spectra as well.
    """
    n = C.shape[0]
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    window: list[float] = []
    prev = None
    for _ in range(max_iter):
        cv = C @ v
        norm = float(np.linalg.norm(cv))
        if norm == 0.0:
            return 0.0
        v = cv / norm
        window.append(norm)
        if len(window) > 50:
            window.pop(0)
        est = float(np.exp(np.mean(np.log(window))))
        if prev is not None and abs(est - prev) <= tol * max(est, 1.0) \
                and len(window) == 50:
            return est
        prev = est
    return prev if prev is not None else 0.0


def _initial_state(system: _StackedSystem, alg: str, init_kind: str,
                   init_sigma: float) -> MomentState:
    KM = system.K * system.M
    mean = np.zeros(KM)
    if init_kind == "exact" or init_sigma == 0.0:
        cov = np.zeros((KM, KM))
    elif init_kind == "gaussian":
        if alg == "centralized":
            # shared start at the centroid of K independent draws
            block = np.full((system.K, system.K), 1.0 / system.K)
            cov = init_sigma ** 2 * np.kron(block, np.eye(system.M))
        else:
            cov = init_sigma ** 2 * np.eye(KM)
    else:
        raise DriftLabError(f"unknown init kind {init_kind!r}")
    return MomentState(mean=mean, cov=cov, n=-1)


def _er_of(system: _StackedSystem, state: MomentState) -> float:
    quad = float(state.mean @ system.weight @ state.mean)
    return (np.trace(system.weight @ state.cov) + quad) / (2.0 * system.K)


def propagate(info: LocalMinimumInfo, A, alg: str, mu: float, B: int,
              n_max: int, init_kind: str = "exact",
              init_sigma: float = 0.0) -> OracleSeries:
    """Exact excess-risk series er(0..n_max) of the linear error recursion.

    Requires state-independent noise covariances (additive-noise quadratics;
    the double-well family, whose gradient noise is data-only, also
    qualifies for its frozen-Hessian model). A non-contracting transition
    matrix triggers a warning, not a failure.
    """
    system = _build_system(info, A, alg, mu, B)
    rho = spectral_radius(system.C)
    if rho >= 1.0:
        warnings.warn(f"transition matrix is not contracting "
                      f"(spectral radius {rho:.6f})", stacklevel=2)
    state = _initial_state(system, alg, init_kind, init_sigma)
    mean, cov = state.mean, state.cov
    er = np.empty(n_max + 1)
    for n in range(n_max + 1):
        mean = system.C @ mean + system.drive
        cov = system.C @ cov @ system.C.T + system.noise_cov
        cov = 0.5 * (cov + cov.T)
        state = MomentState(mean=mean, cov=cov, n=n)
        er[n] = _er_of(system, state)
    return OracleSeries(n=np.arange(n_max + 1), er=er, final=state,
                        spectral_radius=rho)


def steady_state(info: LocalMinimumInfo, A, alg: str, mu: float,
                 B: int) -> float:
    """Exact limiting excess risk of the linear error recursion.

    The fixed-point mean solves the dense linear system ``(I - C) m = drive``
    (Gaussian elimination with partial pivoting); the covariance is iterated
    until successive Frobenius change is below 1e-13.
    """
    system = _build_system(info, A, alg, mu, B)
    rho = spectral_radius(system.C)
    if rho >= 1.0:
        raise NonConvergenceError(
            f"no steady state: spectral radius {rho:.6f} >= 1")
    KM = system.K * system.M
    mean = np.linalg.solve(np.eye(KM) - system.C, system.drive)
    cov = np.zeros((KM, KM))
    for _ in range(COV_FIXED_POINT_BUDGET):
        nxt = system.C @ cov @ system.C.T + system.noise_cov
        nxt = 0.5 * (nxt + nxt.T)
        delta = float(np.linalg.norm(nxt - cov))
        cov = nxt
        if delta <= COV_FIXED_POINT_TOL:
            break
    else:
        raise NonConvergenceError("covariance fixed-point iteration stalled")
    return _er_of(system, MomentState(mean=mean, cov=cov, n=-1))
