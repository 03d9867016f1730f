"""Synthetic heterogeneous agent-risk families with analytic minima.

Two families are provided:

* quadratic least squares: ``J_k(w) = 1/2 (w - w_k)^T H_k (w - w_k) + const``,
  realized either through generated datasets (loss ``1/2 (g^T w - h)^2``,
  empirical second moment pinned exactly to the target Hessian) or as exact
  quadratics with additive Gaussian gradient noise of known covariance;

* a one-dimensional tilted double well: ``Q_k(w; x) = (w^2 - 1)^2 + (b_k + x) w``
  with mean-centered data ``x`` and tilts summing to zero, so the aggregate
  risk is exactly ``(w^2 - 1)^2`` with minima at +/-1, curvature 8 and a
  risk barrier of 1.

Every quantity the closed-form escaping-efficiency predictions consume
(per-agent Hessians, heterogeneity gradients, gradient-noise covariances,
flatness metrics, basin and barrier) is collected in
:class:`LocalMinimumInfo`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import covariance_factor, sorted_eigh, spectral_norm, symmetric_sqrt
from .exceptions import ModelError, NonConvergenceError

TILT_SUM_TOL = 1e-12
DOUBLE_WELL_REGION = 2.0  # |w| range on which the Lipschitz bound is stated


@dataclass(frozen=True)
class Flatness:
    """Flatness metrics of the global Hessian at a local minimum."""

    trace: float
    spectral_norm: float
    frobenius_norm: float

    def chain_holds(self, M: int, tol: float = 1e-12) -> bool:
        """Norm-equivalence chain: Tr/M <= ||.||_2 <= ||.||_F <= Tr <= M ||.||_2."""
        t, s, f = self.trace, self.spectral_norm, self.frobenius_norm
        return (t / M <= s + tol and s <= f + tol
                and f <= t + tol and t <= M * s + tol)


@dataclass(frozen=True)
class LocalMinimumInfo:
    """Everything the theory formulas consume at a local minimizer."""

    w_star: np.ndarray          # (M,)
    H_k_star: np.ndarray        # (K, M, M)
    H_bar: np.ndarray           # (M, M)
    d: np.ndarray               # (K, M) per-agent gradients at w_star
    epsilon: float              # max_k ||H_k - H_bar||_2
    R_s_blocks: np.ndarray      # (K, M, M) batch-size-1 noise covariances
    R_bar_s: np.ndarray         # (M, M) global gradient-noise covariance
    flatness: Flatness
    basin: tuple[float, float] | None = None   # 1-D open interval, if known
    barrier: float | None = None               # risk barrier h

    @property
    def K(self) -> int:
        return self.d.shape[0]

    @property
    def M(self) -> int:
        return self.w_star.shape[0]

    @property
    def d_stacked(self) -> np.ndarray:
        return self.d.reshape(-1)


class NetworkRiskModel:
    """Shared surface of the two risk families (see subclasses)."""

    family: str
    K: int
    M: int
    lipschitz_bound: float

    def grad(self, k: int, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def risk(self, k: int, w: np.ndarray) -> float:
        raise NotImplementedError

    def global_eval(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        """Exact aggregate risk and gradient (no sampling)."""
        w = np.asarray(w, dtype=float)
        J = 0.0
        g = np.zeros(self.M)
        for k in range(self.K):
            J += self.risk(k, w)
            g += self.grad(k, w)
        return J / self.K, g / self.K

    def minibatch_gradient(self, k: int, w: np.ndarray, B: int,
                           rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def noise_covariance(self, k: int, w: np.ndarray) -> np.ndarray:
        """Exact batch-size-1 gradient-noise covariance at ``w``."""
        raise NotImplementedError


class QuadraticNetwork(NetworkRiskModel):
    family = "quadratic"

    def __init__(self, H, w_loc, noise_mode, datasets=None, R_blocks=None):
        self.H = np.ascontiguousarray(H, dtype=float)          # (K, M, M)
        self.w_loc = np.ascontiguousarray(w_loc, dtype=float)  # (K, M)
        self.K, self.M = self.w_loc.shape
        self.noise_mode = noise_mode
        self.datasets = datasets        # list of (features (N, M), labels (N,))
        self.R_blocks = R_blocks        # (K, M, M) for additive mode
        for k in range(self.K):
            eigs = np.linalg.eigvalsh(self.H[k])
            if eigs.min() <= 0:
                raise ModelError(f"Hessian of agent {k} is not positive definite")
        if noise_mode == "additive":
            if R_blocks is None:
                raise ModelError("additive mode requires noise covariances")
            self.R_blocks = np.ascontiguousarray(R_blocks, dtype=float)
            self.noise_factors = np.stack(
                [covariance_factor(self.R_blocks[k]) for k in range(self.K)])
            self.lipschitz_bound = max(spectral_norm(self.H[k]) for k in range(self.K))
        elif noise_mode == "dataset":
            if datasets is None:
                raise ModelError("dataset mode requires datasets")
            self.lipschitz_bound = max(
                float((feats ** 2).sum(axis=1).max()) for feats, _ in datasets)
        else:
            raise ModelError(f"unknown noise mode {noise_mode!r}")

    def aggregate_minimizer(self) -> np.ndarray:
        """Closed-form minimizer of the aggregate risk: (sum H_k)^-1 sum H_k w_k."""
        lhs = self.H.sum(axis=0)
        rhs = np.einsum("kij,kj->i", self.H, self.w_loc)
        return np.linalg.solve(lhs, rhs)

    def grad(self, k, w):
        w = np.asarray(w, dtype=float)
        if self.noise_mode == "dataset":
            # empirical-risk gradient; equals H_k (w - w_loc_k) up to roundoff
            feats, labels = self.datasets[k]
            return feats.T @ (feats @ w - labels) / labels.size
        return self.H[k] @ (w - self.w_loc[k])

    def risk(self, k, w):
        if self.noise_mode == "dataset":
            feats, labels = self.datasets[k]
            resid = feats @ w - labels
            return 0.5 * float(resid @ resid) / labels.size
        delta = np.asarray(w, dtype=float) - self.w_loc[k]
        return 0.5 * float(delta @ self.H[k] @ delta)

    def minibatch_gradient(self, k, w, B, rng):
        if B < 1:
            raise ModelError("batch size must be >= 1")
        w = np.asarray(w, dtype=float)
        if self.noise_mode == "additive":
            z = rng.standard_normal(self.M)
            return self.grad(k, w) + (self.noise_factors[k] @ z) / np.sqrt(B)
        feats, labels = self.datasets[k]
        idx = rng.integers(0, labels.size, size=B)
        g = feats[idx]
        return g.T @ (g @ w - labels[idx]) / B

    def per_sample_grads(self, k, w):
        feats, labels = self.datasets[k]
        return (feats @ w - labels)[:, None] * feats

    def noise_covariance(self, k, w):
        if self.noise_mode == "additive":
            return self.R_blocks[k].copy()
        g = self.per_sample_grads(k, w)
        centered = g - g.mean(axis=0)
        # population covariance: with-replacement sampling over the dataset
        return centered.T @ centered / g.shape[0]


class DoubleWellNetwork(NetworkRiskModel):
    family = "double_well"
    M = 1

    def __init__(self, tilts, datasets):
        self.b = np.ascontiguousarray(tilts, dtype=float)  # (K,)
        if abs(self.b.sum()) > TILT_SUM_TOL:
            raise ModelError(f"tilts must sum to zero (got {self.b.sum():.3e})")
        self.K = self.b.size
        self.datasets = np.ascontiguousarray(datasets, dtype=float)  # (K, N)
        self.noise_mode = "dataset"
        r = DOUBLE_WELL_REGION
        self.lipschitz_bound = 12.0 * r * r - 4.0

    def grad(self, k, w):
        w0 = float(np.asarray(w).reshape(()))
        return np.array([4.0 * w0 * (w0 * w0 - 1.0) + self.b[k]])

    def risk(self, k, w):
        w0 = float(np.asarray(w).reshape(()))
        return (w0 * w0 - 1.0) ** 2 + self.b[k] * w0

    def minibatch_gradient(self, k, w, B, rng):
        if B < 1:
            raise ModelError("batch size must be >= 1")
        idx = rng.integers(0, self.datasets.shape[1], size=B)
        return self.grad(k, w) + self.datasets[k, idx].mean()

    def noise_covariance(self, k, w=None):
        x = self.datasets[k]
        return np.array([[float(x @ x) / x.size]])


def make_quadratic_network(K: int, M: int, hessian_mode: str = "common",
                           minimizer_spread: float = 1.0,
                           dataset_size: int | None = None,
                           noise_mode: str = "additive",
                           noise_scale: float = 1.0,
                           noise_kind: str = "isotropic",
                           R_blocks=None,
                           hess_eig_range: tuple[float, float] = (0.5, 2.0),
                           seed: int | None = None) -> QuadraticNetwork:
    """Build a quadratic agent network with exactly known structure.

    ``hessian_mode`` is "common" (one shared positive-definite Hessian) or
    "heterogeneous" (independent per-agent draws). Local minimizers are drawn
    with standard deviation ``minimizer_spread`` around the origin; a spread
    of zero yields a homogeneous network (d = 0). Dataset mode generates
    least-squares data whose empirical second moment equals the requested
    Hessian exactly and whose label noise is projected so each agent's
    dataset minimizer is exactly the requested one.
    """
    if K < 1 or M < 1:
        raise ModelError("K and M must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = hess_eig_range
    if lo <= 0:
        raise ModelError("Hessian eigenvalue range must be positive")

    def random_spd(scale_lo, scale_hi):
        q, _ = np.linalg.qr(rng.standard_normal((M, M)))
        eigs = rng.uniform(scale_lo, scale_hi, size=M)
        return (q * eigs) @ q.T

    if hessian_mode == "common":
        H0 = random_spd(lo, hi)
        H = np.repeat(H0[None], K, axis=0)
    elif hessian_mode == "heterogeneous":
        H = np.stack([random_spd(lo, hi) for _ in range(K)])
    else:
        raise ModelError(f"unknown hessian_mode {hessian_mode!r}")
    w_loc = minimizer_spread * rng.standard_normal((K, M))

    if noise_mode == "additive":
        if R_blocks is None:
            if noise_kind == "isotropic":
                R_blocks = np.repeat((noise_scale ** 2 * np.eye(M))[None], K, axis=0)
            elif noise_kind == "spd":
                R_blocks = np.stack([
                    noise_scale ** 2 * random_spd(0.5, 1.5) for _ in range(K)])
            else:
                raise ModelError(f"unknown noise_kind {noise_kind!r}")
        else:
            R_blocks = np.asarray(R_blocks, dtype=float)
            if R_blocks.shape != (K, M, M):
                raise ModelError("R_blocks must have shape (K, M, M)")
        return QuadraticNetwork(H, w_loc, "additive", R_blocks=R_blocks)

    if noise_mode != "dataset":
        raise ModelError(f"unknown noise_mode {noise_mode!r}")
    if dataset_size is None or dataset_size < M:
        raise ModelError("dataset mode requires dataset_size >= M")
    N = dataset_size
    datasets = []
    for k in range(K):
        raw = rng.standard_normal((N, M))
        second = raw.T @ raw / N
        w_eig, v = np.linalg.eigh(second)
        if w_eig.min() <= 1e-12:
            raise ModelError("degenerate feature draw; increase dataset_size")
        inv_sqrt = (v / np.sqrt(w_eig)) @ v.T
        feats = raw @ inv_sqrt @ symmetric_sqrt(H[k])
        noise = noise_scale * rng.standard_normal(N)
        # project label noise out of the feature span so w_loc stays the
        # exact dataset minimizer; feats^T feats = N H_k by construction
        coef = np.linalg.solve(H[k], feats.T @ noise) / N
        noise = noise - feats @ coef
        labels = feats @ w_loc[k] + noise
        datasets.append((feats, labels))
    return QuadraticNetwork(H, w_loc, "dataset", datasets=datasets)


def make_double_well_network(K: int, tilts, dataset_size: int = 64,
                             noise_scale: float = 1.0,
                             seed: int | None = None) -> DoubleWellNetwork:
    """Build the 1-D tilted double-well network; tilts must sum to zero."""
    if K < 1:
        raise ModelError("K must be >= 1")
    b = np.asarray(tilts, dtype=float)
    if b.shape != (K,):
        raise ModelError(f"expected {K} tilts, got shape {b.shape}")
    if dataset_size < 1:
        raise ModelError("dataset_size must be >= 1")
    rng = np.random.default_rng(seed)
    x = noise_scale * rng.standard_normal((K, dataset_size))
    x -= x.mean(axis=1, keepdims=True)
    return DoubleWellNetwork(b, x)


def _refine_newton_1d(model: DoubleWellNetwork, w0: float,
                      tol: float = 1e-12, max_steps: int = 100) -> float:
    """Damped Newton on the aggregate gradient; halves the step while |J'| grows."""
    w = float(w0)
    _, g = model.global_eval(np.array([w]))
    for _ in range(max_steps):
        if abs(g[0]) <= tol:
            return w
        hess = 12.0 * w * w - 4.0
        step = g[0] / hess
        damping = 1.0
        while damping > 1e-8:
            trial = w - damping * step
            _, g_trial = model.global_eval(np.array([trial]))
            if abs(g_trial[0]) < abs(g[0]):
                w, g = trial, g_trial
                break
            damping *= 0.5
        else:
            break
    if abs(g[0]) > tol:
        raise NonConvergenceError("Newton refinement of the double-well minimizer "
                                  f"stalled at |J'| = {abs(g[0]):.3e}")
    return w


def minimizer_summary(model: NetworkRiskModel,
                      which: str = "auto") -> LocalMinimumInfo:
    """Assemble all local-minimum quantities used by the theory formulas.

    For the quadratic family the aggregate minimizer is closed form and
    ``which`` is ignored; for the double well ``which`` selects the minimum
    near +1 ("plus", also the "auto" default) or -1 ("minus").
    """
    if model.family == "quadratic":
        w_star = model.aggregate_minimizer()
        H_k_star = model.H.copy()
        basin, barrier = None, None
    elif model.family == "double_well":
        seed_point = {"auto": 1.0, "plus": 1.0, "minus": -1.0}.get(which)
        if seed_point is None:
            raise ModelError(f"unknown minimizer selector {which!r}")
        w0 = _refine_newton_1d(model, seed_point)
        w_star = np.array([w0])
        curv = 12.0 * w0 * w0 - 4.0
        H_k_star = np.full((model.K, 1, 1), curv)
        # basin of +1 is the open interval (0, inf) between the adjacent
        # stationary points of (w^2-1)^2; mirrored for -1
        basin = (0.0, np.inf) if w0 > 0 else (-np.inf, 0.0)
        J_star, _ = model.global_eval(w_star)
        J_saddle, _ = model.global_eval(np.array([0.0]))
        barrier = J_saddle - J_star
    else:
        raise ModelError(f"unknown model family {model.family!r}")

    H_bar = H_k_star.mean(axis=0)
    d = np.stack([model.grad(k, w_star) for k in range(model.K)])
    epsilon = max(spectral_norm(H_k_star[k] - H_bar) for k in range(model.K))
    R_s_blocks = np.stack([model.noise_covariance(k, w_star)
                           for k in range(model.K)])
    R_bar_s = R_s_blocks.sum(axis=0) / model.K ** 2
    flat = Flatness(trace=float(np.trace(H_bar)),
                    spectral_norm=spectral_norm(H_bar),
                    frobenius_norm=float(np.linalg.norm(H_bar)))
    return LocalMinimumInfo(w_star=w_star, H_k_star=H_k_star, H_bar=H_bar,
                            d=d, epsilon=epsilon, R_s_blocks=R_s_blocks,
                            R_bar_s=R_bar_s, flatness=flat,
                            basin=basin, barrier=barrier)


def global_eval(model: NetworkRiskModel, w) -> dict:
    """Exact aggregate risk and gradient at ``w``."""
    J, g = model.global_eval(np.asarray(w, dtype=float))
    return {"J": J, "grad": g}


def minibatch_gradient(model: NetworkRiskModel, k: int, w, B: int,
                       rng: np.random.Generator) -> np.ndarray:
    """One mini-batch stochastic gradient for agent ``k`` at ``w``."""
    return model.minibatch_gradient(k, np.asarray(w, dtype=float), B, rng)


def estimate_noise_moments(model: NetworkRiskModel, k: int, w, B: int,
                           reps: int, rng: np.random.Generator) -> dict:
    """Empirical gradient-noise mean and covariance over ``reps`` draws.

    Vectorized over replications; returns standard errors of the mean.
    """
    if reps < 2:
        raise ModelError("reps must be >= 2")
    w = np.asarray(w, dtype=float)
    exact = model.grad(k, w)
    if model.family == "quadratic" and model.noise_mode == "additive":
        z = rng.standard_normal((reps, model.M))
        noise = z @ model.noise_factors[k].T / np.sqrt(B)
    elif model.family == "quadratic":
        feats, labels = model.datasets[k]
        per_sample = model.per_sample_grads(k, w)
        idx = rng.integers(0, labels.size, size=(reps, B))
        noise = per_sample[idx].mean(axis=1) - exact
    else:
        x = model.datasets[k]
        idx = rng.integers(0, x.size, size=(reps, B))
        noise = x[idx].mean(axis=1)[:, None]
    mean = noise.mean(axis=0)
    centered = noise - mean
    cov = centered.T @ centered / (reps - 1)
    mean_stderr = noise.std(axis=0, ddof=1) / np.sqrt(reps)
    return {"mean": mean, "covariance": cov, "mean_stderr": mean_stderr,
            "reps": reps}
