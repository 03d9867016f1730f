"""Distributed stochastic-gradient dynamics and ensemble statistics.

Three algorithms share one engine. Per update, every agent draws a
mini-batch gradient at its own previous iterate; then

* centralized: one shared iterate moves along the average of the K agent
  batch gradients (the network-uniform special case);
* consensus: neighbor iterates are combined first, the local gradient
  correction is applied at the agent's own pre-combination iterate;
* diffusion: the local gradient step comes first, the results are combined.

Indexing conventions: a :class:`Trajectory` stores states by update count
(entry 0 is the initial condition), while ensemble series follow the
recursion index of the escaping-efficiency formulas, whose entry ``n``
describes the iterate produced by update ``n + 1`` (initial condition at
``n = -1``). Replication ``r`` of an ensemble always draws from the
dedicated stream ``(seed, r)``, so results do not depend on chunking or on
how many workers execute the replications.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .exceptions import DriftLabError, ModelError
from .risk_models import LocalMinimumInfo, NetworkRiskModel
from .topology import CombinationMatrix

ALGORITHMS = ("centralized", "consensus", "diffusion")
_ALG_CODE = {"centralized": _kernels.ALG_CENTRALIZED,
             "consensus": _kernels.ALG_CONSENSUS,
             "diffusion": _kernels.ALG_DIFFUSION}
DEFAULT_CHUNK = 1024


def algorithm_matrices(alg: str, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The (A1, A2) pair of the unified recursion for each algorithm."""
    K = A.shape[0]
    eye = np.eye(K)
    if alg == "consensus":
        return A, eye
    if alg == "diffusion":
        return eye, A
    if alg == "centralized":
        return eye, np.full((K, K), 1.0 / K)
    raise DriftLabError(f"unknown algorithm {alg!r}")


@dataclass(frozen=True)
class RunConfig:
    """Step size, batch size, horizon and reproducibility knobs of one run."""

    mu: float
    B: int
    n_steps: int
    init_kind: str = "exact"       # "exact" (at w_star) or "gaussian"
    init_sigma: float = 0.0
    seed: int = 0
    record_every: int = 1
    div_threshold: float = 1e12
    lr_drop_fracs: tuple = ()      # optional schedule: divide mu by 10 at each

    def __post_init__(self):
        if self.mu < 0:
            raise DriftLabError("step size must be non-negative")
        if self.B < 1:
            raise DriftLabError("batch size must be >= 1")
        if self.n_steps < 1:
            raise DriftLabError("n_steps must be >= 1")
        if self.init_kind not in ("exact", "gaussian"):
            raise DriftLabError(f"unknown init kind {self.init_kind!r}")

    def mu_schedule(self) -> np.ndarray:
        mu = np.full(self.n_steps, self.mu)
        for frac in self.lr_drop_fracs:
            start = int(np.floor(frac * self.n_steps))
            mu[start:] /= 10.0
        return mu


@dataclass(frozen=True)
class NetworkState:
    W: np.ndarray   # (K, M) stacked agent iterates
    n: int = 0


@dataclass
class Trajectory:
    """One realization; arrays are indexed by update count (0 = init)."""

    alg: str
    cfg: RunConfig
    step: np.ndarray                  # update counts 0..n
    er: np.ndarray                    # network-average excess risk
    err_sq: np.ndarray                # ||W - 1 (x) w_star||^2
    centroid_err_sq: np.ndarray       # K ||centroid - w_star||^2
    cons_dist: np.ndarray             # consensus distance
    centroid: np.ndarray              # (n+1, M)
    state_steps: np.ndarray           # update counts of recorded states
    states: np.ndarray                # (len(state_steps), K, M)
    escape_update: int | None = None  # first update count outside the basin
    diverged_update: int | None = None
    noise: np.ndarray | None = None   # (n, K, M), entry t drives update t+1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def replication_rng(seed: int, rep: int = 0) -> np.random.Generator:
    """Dedicated generator for one replication; independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(rep))))


def consensus_distance(state) -> float:
    """Squared distance between stacked iterates and their common centroid."""
    W = state.W if isinstance(state, NetworkState) else np.asarray(state, dtype=float)
    centered = W - W.mean(axis=0, keepdims=True)
    return float((centered * centered).sum())


def _combination_array(A, K: int) -> np.ndarray:
    if A is None:
        return np.full((K, K), 1.0 / K)
    arr = A.A if isinstance(A, CombinationMatrix) else np.asarray(A, dtype=float)
    if arr.shape != (K, K):
        raise DriftLabError(f"combination matrix shape {arr.shape} does not "
                            f"match K={K}")
    return np.ascontiguousarray(arr)


def _initial_state(info, cfg, alg, K, M, rng) -> np.ndarray:
    if cfg.init_kind == "exact":
        return np.tile(info.w_star, (K, 1))
    draws = info.w_star[None] + cfg.init_sigma * rng.standard_normal((K, M))
    if alg == "centralized":
        # the shared iterate starts at the centroid of the per-agent draws
        draws = np.tile(draws.mean(axis=0), (K, 1))
    return draws


def _record_scalars(model, info, J_star, W):
    er = 0.0
    for k in range(W.shape[0]):
        Jk, _ = model.global_eval(W[k])
        er += Jk - J_star
    er /= W.shape[0]
    diff = W - info.w_star[None]
    err_sq = float((diff * diff).sum())
    centroid = W.mean(axis=0)
    cdiff = centroid - info.w_star
    centroid_err_sq = W.shape[0] * float(cdiff @ cdiff)
    return er, err_sq, centroid_err_sq, consensus_distance(W), centroid


def _in_basin(centroid, basin) -> bool:
    lo, hi = basin
    c = centroid[0]
    return lo < c < hi


def run_trajectory(model: NetworkRiskModel, info: LocalMinimumInfo,
                   A, alg: str, cfg: RunConfig,
                   rng: np.random.Generator | None = None,
                   record_states: bool = True,
                   record_noise: bool = False) -> Trajectory:
    """Simulate one realization of the chosen algorithm.

    Gradient noise is sampled per agent and per update at the agent's current
    iterate. Simulation stops early (arrays truncated) if any entry exceeds
    the divergence threshold.
    """
    if alg not in ALGORITHMS:
        raise DriftLabError(f"unknown algorithm {alg!r}")
    K, M = model.K, model.M
    A_arr = _combination_array(A, K)
    rng = rng if rng is not None else replication_rng(cfg.seed)
    mu = cfg.mu_schedule()
    J_star, _ = model.global_eval(info.w_star)

    W = _initial_state(info, cfg, alg, K, M, rng)
    n = cfg.n_steps
    er = np.empty(n + 1)
    err_sq = np.empty(n + 1)
    centroid_err_sq = np.empty(n + 1)
    cons = np.empty(n + 1)
    centroid = np.empty((n + 1, M))
    noise_rec = np.empty((n, K, M)) if record_noise else None
    state_steps = [0]
    states = [W.copy()]
    er[0], err_sq[0], centroid_err_sq[0], cons[0], centroid[0] = \
        _record_scalars(model, info, J_star, W)
    escape_update = None
    diverged_update = None
    if info.basin is not None and not _in_basin(centroid[0], info.basin):
        escape_update = 0

    last = n
    for t in range(n):
        ghat = np.empty((K, M))
        for k in range(K):
            ghat[k] = model.minibatch_gradient(k, W[k], cfg.B, rng)
        if record_noise:
            for k in range(K):
                noise_rec[t, k] = ghat[k] - model.grad(k, W[k])
        if alg == "centralized":
            w_next = W[0] - mu[t] * ghat.mean(axis=0)
            W = np.tile(w_next, (K, 1))
        elif alg == "diffusion":
            phi = W - mu[t] * ghat
            W = A_arr.T @ phi
        else:
            W = A_arr.T @ W - mu[t] * ghat
        u = t + 1
        if np.abs(W).max() > cfg.div_threshold:
            diverged_update = u
            last = t
            break
        er[u], err_sq[u], centroid_err_sq[u], cons[u], centroid[u] = \
            _record_scalars(model, info, J_star, W)
        if record_states and (u % cfg.record_every == 0 or u == n):
            state_steps.append(u)
            states.append(W.copy())
        if (escape_update is None and info.basin is not None
                and not _in_basin(centroid[u], info.basin)):
            escape_update = u

    end = last + 1 if diverged_update is None else diverged_update
    return Trajectory(alg=alg, cfg=cfg, step=np.arange(end),
                      er=er[:end], err_sq=err_sq[:end],
                      centroid_err_sq=centroid_err_sq[:end],
                      cons_dist=cons[:end], centroid=centroid[:end],
                      state_steps=np.array(state_steps),
                      states=np.stack(states),
                      escape_update=escape_update,
                      diverged_update=diverged_update,
                      noise=noise_rec[:end - 1] if record_noise else None)


def _linear_like_trajectory(model, info, A, alg, cfg, rng, coupled_to,
                            frozen_hessian: bool) -> Trajectory:
    """Shared driver for the short-term (frozen Hessian) and unified
    (integrated Hessian) error recursions."""
    if alg not in ALGORITHMS:
        raise DriftLabError(f"unknown algorithm {alg!r}")
    K, M = model.K, model.M
    A_arr = _combination_array(A, K)
    A1, A2 = algorithm_matrices(alg, A_arr)
    rng = rng if rng is not None else replication_rng(cfg.seed)
    mu = cfg.mu_schedule()
    J_star, _ = model.global_eval(info.w_star)
    n = cfg.n_steps

    if coupled_to is not None:
        if coupled_to.noise is None:
            raise DriftLabError("coupled mode needs a trajectory recorded with "
                                "record_noise=True")
        if coupled_to.noise.shape[0] < n:
            raise DriftLabError("paired trajectory is shorter than n_steps")
        X = info.w_star[None] - coupled_to.states[0]
        noise_source = coupled_to.noise
    else:
        W0 = _initial_state(info, cfg, alg, K, M, rng)
        X = info.w_star[None] - W0
        noise_source = None

    grad_star = info.d  # exact per-agent gradients at w_star
    er = np.empty(n + 1)
    err_sq = np.empty(n + 1)
    centroid_err_sq = np.empty(n + 1)
    cons = np.empty(n + 1)
    centroid = np.empty((n + 1, M))
    state_steps = [0]
    states = [info.w_star[None] - X]
    er[0], err_sq[0], centroid_err_sq[0], cons[0], centroid[0] = \
        _record_scalars(model, info, J_star, info.w_star[None] - X)
    diverged_update = None
    last = n

    for t in range(n):
        if noise_source is not None:
            s = noise_source[t]
        else:
            s = np.empty((K, M))
            for k in range(K):
                s[k] = (model.minibatch_gradient(k, info.w_star, cfg.B, rng)
                        - grad_star[k])
        if frozen_hessian:
            HX = np.einsum("kmn,kn->km", info.H_k_star, X)
        else:
            HX = np.empty((K, M))
            for k in range(K):
                Hk = integrated_hessian(model, k, info.w_star - X[k], info)
                HX[k] = Hk @ X[k]
        Z = A1.T @ X - mu[t] * HX + mu[t] * info.d + mu[t] * s
        X = A2.T @ Z
        u = t + 1
        iterates = info.w_star[None] - X
        if np.abs(iterates).max() > cfg.div_threshold:
            diverged_update = u
            last = t
            break
        er[u], err_sq[u], centroid_err_sq[u], cons[u], centroid[u] = \
            _record_scalars(model, info, J_star, iterates)
        if u % cfg.record_every == 0 or u == n:
            state_steps.append(u)
            states.append(iterates.copy())

    end = last + 1 if diverged_update is None else diverged_update
    return Trajectory(alg=alg, cfg=cfg, step=np.arange(end),
                      er=er[:end], err_sq=err_sq[:end],
                      centroid_err_sq=centroid_err_sq[:end],
                      cons_dist=cons[:end], centroid=centroid[:end],
                      state_steps=np.array(state_steps), states=np.stack(states),
                      diverged_update=diverged_update)


def run_short_term(model, info, A, alg, cfg, rng=None,
                   coupled_to: Trajectory | None = None) -> Trajectory:
    """Short-term model: the error recursion with the Hessian frozen at the
    local minimizer.

    ``coupled_to`` replays the exact noise realizations of a paired true run
    (recorded with ``record_noise=True``); standalone mode samples fresh
    noise at the minimizer.
    """
    return _linear_like_trajectory(model, info, A, alg, cfg, rng, coupled_to,
                                   frozen_hessian=True)


def run_unified(model, info, A, alg, cfg, rng=None,
                coupled_to: Trajectory | None = None) -> Trajectory:
    """Unified error recursion with the exact integrated Hessian.

    Algebraically identical to the per-agent recursions of
    :func:`run_trajectory` when driven by the same noise; exposed as an
    independent cross-check of the engine.
    """
    return _linear_like_trajectory(model, info, A, alg, cfg, rng, coupled_to,
                                   frozen_hessian=False)


def integrated_hessian(model, k: int, w: np.ndarray,
                       info: LocalMinimumInfo) -> np.ndarray:
    """Mean-value Hessian H with grad J_k(w_star) - grad J_k(w) = H (w_star - w)."""
    if model.family == "quadratic":
        return model.H[k]
    w_star = float(info.w_star[0])
    wt = w_star - float(np.asarray(w).reshape(()))
    val = 12.0 * (w_star * w_star - w_star * wt + wt * wt / 3.0) - 4.0
    return np.array([[val]])


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleStats:
    """Monte Carlo escaping-efficiency series with standard errors.

    Entry ``n`` describes the iterate after ``n + 1`` updates (recursion
    indexing). Diverged replications leave the averages from their divergence
    step onward and are tallied in ``diverged_fraction`` (cumulative);
    ``escaped_fraction`` is cumulative over replications whose centroid has
    left the basin (double-well models only, else NaN).
    """

    alg: str
    reps: int
    seed: int
    n: np.ndarray
    er_mean: np.ndarray
    er_stderr: np.ndarray
    cons_mean: np.ndarray
    escaped_fraction: np.ndarray
    diverged_fraction: np.ndarray
    backend: str = field(default_factory=_kernels.backend_name)


@dataclass
class EscapeStats:
    """Escape summary for the double-well family (recursion indexing)."""

    alg: str
    reps: int
    barrier: float
    escape_fraction_by_step: np.ndarray
    escaped: int
    mean_escape_time: float          # mean first-exit index; NaN if never
    er_crossing_step: int            # first n with er_mean >= barrier; -1 if none
    ensemble: EnsembleStats


def _workers(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("DRIFTLAB_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _draw_quadratic_chunk(model, info, cfg, alg, rep_lo, rep_hi, n):
    K, M = model.K, model.M
    R = rep_hi - rep_lo
    w0 = np.empty((R, K, M))
    noise = np.empty((R, n, K, M))
    factors = model.noise_factors  # (K, M, M)
    scale = 1.0 / np.sqrt(cfg.B)
    for i, rep in enumerate(range(rep_lo, rep_hi)):
        gen = replication_rng(cfg.seed, rep)
        if cfg.init_kind == "gaussian":
            draws = info.w_star[None] + cfg.init_sigma * gen.standard_normal((K, M))
            w0[i] = draws.mean(axis=0)[None] if alg == "centralized" else draws
        else:
            w0[i] = info.w_star[None]
        z = gen.standard_normal((n, K, M))
        noise[i] = np.einsum("kij,nkj->nki", factors, z) * scale
    return w0, noise


def _draw_double_well_chunk(model, info, cfg, alg, rep_lo, rep_hi, n):
    K = model.K
    R = rep_hi - rep_lo
    x = model.datasets  # (K, N)
    N = x.shape[1]
    w0 = np.empty((R, K))
    noise = np.empty((R, n, K))
    for i, rep in enumerate(range(rep_lo, rep_hi)):
        gen = replication_rng(cfg.seed, rep)
        if cfg.init_kind == "gaussian":
            draws = info.w_star[0] + cfg.init_sigma * gen.standard_normal((K, 1))
            w0[i] = draws.mean() if alg == "centralized" else draws[:, 0]
        else:
            w0[i] = info.w_star[0]
        idx = gen.integers(0, N, size=(n, K, cfg.B))
        noise[i] = x[np.arange(K)[None, :, None], idx].mean(axis=2)
    return w0, noise


def _run_chunk(model, info, A_arr, alg, cfg, mu, rep_lo, rep_hi, n, J_star):
    code = _ALG_CODE[alg]
    if model.family == "quadratic":
        w0, noise = _draw_quadratic_chunk(model, info, cfg, alg, rep_lo, rep_hi, n)
        er, cons, diverged = _kernels.simulate_quadratic(
            w0, A_arr, model.H, model.w_loc, info.H_bar, info.w_star,
            noise, mu, code, cfg.div_threshold)
        escaped = np.full(rep_hi - rep_lo, -1, dtype=np.int64)
    else:
        w0, noise = _draw_double_well_chunk(model, info, cfg, alg, rep_lo, rep_hi, n)
        lo, hi = info.basin
        er, cons, escaped, diverged = _kernels.simulate_double_well(
            w0, A_arr, model.b, noise, mu, code, J_star, lo, hi,
            cfg.div_threshold)
    return er, cons, escaped, diverged


def ensemble_excess_risk(model, info, A, alg, cfg, reps,
                         workers: int | None = None,
                         chunk_size: int = DEFAULT_CHUNK) -> EnsembleStats:
    """Monte Carlo estimate of the escaping-efficiency series.

    Replication ``r`` uses the generator stream ``(cfg.seed, r)``; chunking
    and worker count cannot change the result. Quadratic models with additive
    noise and double-well models run on the selected kernel backend;
    dataset-mode quadratics fall back to per-replication simulation.
    """
    if reps < 2:
        raise DriftLabError("reps must be >= 2")
    if alg not in ALGORITHMS:
        raise DriftLabError(f"unknown algorithm {alg!r}")
    K = model.K
    A_arr = _combination_array(A, K)
    n = cfg.n_steps
    mu = cfg.mu_schedule()

    fast = (model.family == "double_well"
            or (model.family == "quadratic" and model.noise_mode == "additive"))
    if not fast:
        return _ensemble_generic(model, info, A, alg, cfg, reps)

    J_star, _ = model.global_eval(info.w_star)
    bounds = [(lo, min(lo + chunk_size, reps))
              for lo in range(0, reps, chunk_size)]

    def work(bound):
        lo, hi = bound
        return _run_chunk(model, info, A_arr, alg, cfg, mu, lo, hi, n, J_star)

    n_workers = _workers(workers)
    if n_workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, bounds))
    else:
        results = [work(b) for b in bounds]

    er_sum = np.zeros(n)
    er_sq_sum = np.zeros(n)
    cons_sum = np.zeros(n)
    alive = np.zeros(n, dtype=np.int64)
    escaped_by = np.zeros(n, dtype=np.int64)
    diverged_by = np.zeros(n, dtype=np.int64)
    steps = np.arange(n)
    for er, cons, escaped, diverged in results:
        ok = ~np.isnan(er)
        alive += ok.sum(axis=0)
        er_sum += np.where(ok, er, 0.0).sum(axis=0)
        er_sq_sum += np.where(ok, er * er, 0.0).sum(axis=0)
        cons_sum += np.where(ok, cons, 0.0).sum(axis=0)
        esc = escaped[escaped >= 0]
        escaped_by += (esc[:, None] <= steps[None, :]).sum(axis=0)
        div = diverged[diverged >= 0]
        diverged_by += (div[:, None] <= steps[None, :]).sum(axis=0)

    alive_f = np.maximum(alive, 1)
    empty = alive == 0
    er_mean = np.where(empty, np.nan, er_sum / alive_f)
    var = np.maximum(er_sq_sum / alive_f - er_mean ** 2, 0.0)
    var *= alive_f / np.maximum(alive_f - 1, 1)
    er_stderr = np.sqrt(var / alive_f)
    cons_mean = np.where(empty, np.nan, cons_sum / alive_f)
    if model.family == "double_well":
        escaped_fraction = escaped_by / reps
    else:
        escaped_fraction = np.full(n, np.nan)
    return EnsembleStats(alg=alg, reps=reps, seed=cfg.seed, n=steps,
                         er_mean=er_mean, er_stderr=er_stderr,
                         cons_mean=cons_mean,
                         escaped_fraction=escaped_fraction,
                         diverged_fraction=diverged_by / reps)


def _ensemble_generic(model, info, A, alg, cfg, reps) -> EnsembleStats:
    """Per-replication fallback for models without a kernel fast path."""
    n = cfg.n_steps
    er = np.full((reps, n), np.nan)
    cons = np.full((reps, n), np.nan)
    escaped_at = np.full(reps, -1, dtype=np.int64)
    diverged_at = np.full(reps, -1, dtype=np.int64)
    for r in range(reps):
        traj = run_trajectory(model, info, A, alg, cfg,
                              rng=replication_rng(cfg.seed, r),
                              record_states=False)
        m = traj.er.size - 1  # updates completed
        er[r, :m] = traj.er[1:]
        cons[r, :m] = traj.cons_dist[1:]
        if traj.escape_update is not None and traj.escape_update >= 1:
            escaped_at[r] = traj.escape_update - 1
        if traj.diverged_update is not None:
            diverged_at[r] = traj.diverged_update - 1
    ok = ~np.isnan(er)
    counts = ok.sum(axis=0)
    alive = np.maximum(counts, 1)
    er_mean = np.where(counts == 0, np.nan,
                       np.where(ok, er, 0.0).sum(axis=0) / alive)
    var = np.maximum(np.where(ok, er * er, 0.0).sum(axis=0) / alive
                     - er_mean ** 2, 0.0)
    var *= alive / np.maximum(alive - 1, 1)
    steps = np.arange(n)
    esc = escaped_at[escaped_at >= 0]
    div = diverged_at[diverged_at >= 0]
    if model.family == "double_well":
        escaped_fraction = (esc[:, None] <= steps[None, :]).sum(axis=0) / reps
    else:
        escaped_fraction = np.full(n, np.nan)
    return EnsembleStats(alg=alg, reps=reps, seed=cfg.seed, n=steps,
                         er_mean=er_mean,
                         er_stderr=np.sqrt(var / alive),
                         cons_mean=np.where(ok, cons, 0.0).sum(axis=0) / alive,
                         escaped_fraction=escaped_fraction,
                         diverged_fraction=(div[:, None] <= steps[None, :])
                         .sum(axis=0) / reps)


def escape_statistics(model, info, A, alg, cfg, reps,
                      workers: int | None = None) -> EscapeStats:
    """First-exit statistics for the double-well family.

    Two escape notions are reported: per replication, the first recursion
    index at which the network centroid leaves the basin interval (primary);
    and, across the ensemble, the first index at which the mean excess risk
    exceeds the risk barrier (the on-average criterion).
    """
    if model.family != "double_well":
        raise ModelError("escape statistics require the double-well family "
                         "(quadratic risks have no finite barrier)")
    stats = ensemble_excess_risk(model, info, A, alg, cfg, reps, workers=workers)
    frac = stats.escaped_fraction
    escaped = int(round(frac[-1] * reps))
    if escaped > 0:
        newly = np.diff(np.concatenate(([0.0], frac))) * reps
        mean_time = float((newly * stats.n).sum() / escaped)
    else:
        mean_time = float("nan")
    h = info.barrier
    above = np.flatnonzero(stats.er_mean >= h)
    crossing = int(above[0]) if above.size else -1
    return EscapeStats(alg=alg, reps=reps, barrier=h,
                       escape_fraction_by_step=frac, escaped=escaped,
                       mean_escape_time=mean_time, er_crossing_step=crossing,
                       ensemble=stats)
