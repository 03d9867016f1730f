"""Closed-form escaping-efficiency predictions and bounds.

The dominant-term prediction for the network-average excess risk after
``n + 1`` updates near a local minimum is

    centralized:  (mu/B) e(n)
    consensus:    (mu/B) e(n) + mu^2 f_con(n)
    diffusion:    (mu/B) e(n) + mu^2 f_dif(n)

with ``e(n) = 1/4 Tr((I - (I - mu Hbar)^(2(n+1))) Rbar_s)`` and, writing
``x_k`` for the blocks of ``V_alpha^T d`` and ``lam_k`` for the sub-unit
eigenvalues of the combination matrix,

    f_con(n) = 1/(2K) sum_k ((1 - lam_k^(n+1)) / (1 - lam_k))^2 ||x_k||^2_Hbar

and ``f_dif`` carrying an extra ``lam_k^2`` factor per term, which makes
``f_dif <= f_con`` termwise. Everything is evaluated through small
eigendecompositions, so matrix powers are exact and monotone in ``n``.
The remainder terms of the underlying expansions are intentionally not
modeled; tolerances live in the acceptance experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import sorted_eigh
from .exceptions import DriftLabError
from .risk_models import LocalMinimumInfo
from .topology import SpectralDecomposition


@dataclass(frozen=True)
class TheoryInputs:
    """Precomputed spectral quantities feeding every prediction."""

    H_bar: np.ndarray
    R_bar_s: np.ndarray
    d: np.ndarray                    # (K, M)
    spectral: SpectralDecomposition
    mu: float
    B: int
    sigma: np.ndarray = field(init=False)      # eigenvalues of H_bar
    noise_diag: np.ndarray = field(init=False)  # diag(U^T Rbar_s U)
    lam: np.ndarray = field(init=False)         # sub-unit eigenvalues of A
    hnorm_sq: np.ndarray = field(init=False)    # ||x_k||^2_Hbar per mode
    norm_sq: np.ndarray = field(init=False)     # ||x_k||^2 per mode
    lam_max_noise: float = field(init=False)

    def __post_init__(self):
        sigma, U = sorted_eigh(self.H_bar)
        if sigma.min() <= 0:
            raise DriftLabError("global Hessian must be positive definite")
        if self.mu * sigma.max() >= 1.0:
            raise DriftLabError(
                f"mu * ||H_bar|| = {self.mu * sigma.max():.3g} >= 1; the matrix "
                "power (I - mu H_bar)^n does not contract")
        if self.B < 1:
            raise DriftLabError("batch size must be >= 1")
        object.__setattr__(self, "sigma", sigma)
        rot = U.T @ self.R_bar_s @ U
        object.__setattr__(self, "noise_diag", np.diag(rot).copy())
        lam = np.asarray(self.spectral.P_alpha, dtype=float)
        if lam.size and np.abs(lam).max() >= 1.0:
            raise DriftLabError("sub-unit eigenvalue magnitudes must be < 1")
        object.__setattr__(self, "lam", lam)
        x = self.spectral.V_alpha.T @ self.d  # (K-1, M)
        object.__setattr__(self, "hnorm_sq",
                           np.einsum("km,mn,kn->k", x, self.H_bar, x))
        object.__setattr__(self, "norm_sq", np.einsum("km,km->k", x, x))
        noise_eigs, _ = sorted_eigh(self.R_bar_s)
        object.__setattr__(self, "lam_max_noise", float(noise_eigs.max(initial=0.0)))

    @property
    def K(self) -> int:
        return self.d.shape[0]

    @classmethod
    def from_components(cls, info: LocalMinimumInfo,
                        spectral: SpectralDecomposition,
                        mu: float, B: int) -> "TheoryInputs":
        return cls(H_bar=info.H_bar, R_bar_s=info.R_bar_s, d=info.d,
                   spectral=spectral, mu=mu, B=B)


@dataclass(frozen=True)
class ERPrediction:
    n: object
    alg: str
    e_term: object   # (mu/B) e(n)
    f_term: object   # mu^2 f(n)

    @property
    def total(self):
        return self.e_term + self.f_term


def _decay_powers(inputs: TheoryInputs, n) -> np.ndarray:
    """(1 - mu sigma_i)^(2(n+1)) for each eigenvalue, broadcast over n."""
    n = np.asarray(n)
    base = 1.0 - inputs.mu * inputs.sigma
    return base[..., :] ** (2.0 * (n[..., None] + 1.0))


def e_n(inputs: TheoryInputs, n):
    """Gradient-noise contribution e(n); shared by all three algorithms."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise DriftLabError("n must be >= 0")
    val = 0.25 * ((1.0 - _decay_powers(inputs, n)) * inputs.noise_diag).sum(axis=-1)
    return val if val.ndim else float(val)


def _mode_weights(inputs: TheoryInputs, alg: str) -> np.ndarray:
    if alg == "consensus":
        return np.ones_like(inputs.lam)
    if alg == "diffusion":
        return inputs.lam ** 2
    raise DriftLabError(f"unknown algorithm {alg!r}")


def f_n(inputs: TheoryInputs, alg: str, n):
    """Consensus-distance contribution f(n); zero for the centralized case."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise DriftLabError("n must be >= 0")
    if alg == "centralized" or inputs.lam.size == 0:
        out = np.zeros(n.shape)
        return out if out.ndim else 0.0
    lam = inputs.lam
    ratio = (1.0 - lam[..., :] ** (n[..., None] + 1.0)) / (1.0 - lam)
    w = _mode_weights(inputs, alg)
    val = (w * ratio ** 2 * inputs.hnorm_sq).sum(axis=-1) / (2.0 * inputs.K)
    return val if val.ndim else float(val)


def predict_er(inputs: TheoryInputs, alg: str, n) -> ERPrediction:
    """Dominant-term escaping-efficiency prediction at recursion index n."""
    e_term = inputs.mu / inputs.B * e_n(inputs, n)
    if alg == "centralized":
        f_term = np.zeros(np.asarray(n).shape)
        f_term = f_term if f_term.ndim else 0.0
    else:
        f_term = inputs.mu ** 2 * f_n(inputs, alg, n)
    return ERPrediction(n=n, alg=alg, e_term=e_term, f_term=f_term)


def predict_steady_state(inputs: TheoryInputs, alg: str) -> float:
    """Limiting excess risk: mu/(4B) Tr(Rbar_s) plus the heterogeneity term."""
    base = inputs.mu / (4.0 * inputs.B) * inputs.noise_diag.sum()
    if alg == "centralized" or inputs.lam.size == 0:
        return float(base)
    w = _mode_weights(inputs, alg)
    extra = (w * inputs.hnorm_sq / (1.0 - inputs.lam) ** 2).sum()
    return float(base + inputs.mu ** 2 * extra / (2.0 * inputs.K))


def upper_bound(inputs: TheoryInputs, alg: str, n):
    """Flatness-coupled upper bound U_n on the dominant-term prediction.

    The noise part replaces the noise covariance by its largest eigenvalue;
    the heterogeneity part replaces the Hessian-weighted norm by
    Tr(H_bar)/2 times the plain squared norm.
    """
    n = np.asarray(n)
    noise_part = 0.25 * inputs.lam_max_noise * (1.0 - _decay_powers(inputs, n)) \
        .sum(axis=-1)
    total = inputs.mu / inputs.B * noise_part
    if alg != "centralized" and inputs.lam.size:
        lam = inputs.lam
        ratio = (1.0 - lam[..., :] ** (n[..., None] + 1.0)) / (1.0 - lam)
        w = _mode_weights(inputs, alg)
        het = 0.5 * np.trace(inputs.H_bar) * (w * ratio ** 2 * inputs.norm_sq) \
            .sum(axis=-1)
        total = total + inputs.mu ** 2 * het
    return total if np.asarray(total).ndim else float(total)


def markov_stay_probability(U_n, h: float):
    """Markov lower bound on staying below the risk barrier: max(0, 1 - U/h)."""
    if h <= 0:
        raise DriftLabError("risk barrier must be positive")
    return np.clip(1.0 - np.asarray(U_n) / h, 0.0, 1.0)[()]
