"""Canned experiment drivers joining theory, oracle and simulation.

Every driver returns plain row dictionaries and can write them as CSV. CSV
output is atomic (temp file then rename), uses '.' decimals and 17
significant digits, and is byte-identical across reruns of the same
configuration when the timestamp comment is suppressed.
"""

from __future__ import annotations

import csv
import datetime
import os
import tempfile

import numpy as np

from . import moment_oracle
from .dynamics import (ALGORITHMS, RunConfig, ensemble_excess_risk,
                       escape_statistics)
from .exceptions import ConfigError
from .risk_models import LocalMinimumInfo, NetworkRiskModel, minimizer_summary
from .theory import (TheoryInputs, predict_er, predict_steady_state,
                     upper_bound)
from .topology import CombinationMatrix, spectral_decompose

LARGE_BATCH_FACTOR = 10.0


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and value != value:  # NaN
        return "nan"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path, fieldnames, rows, deterministic: bool = False,
              comments=()) -> None:
    """Atomic CSV writer; never leaves a partial file behind."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            if not deterministic:
                stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
                fh.write(f"# generated {stamp}\n")
            for comment in comments:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(fieldnames)
            for row in rows:
                writer.writerow([_fmt(row[name]) for name in fieldnames])
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def theory_table(inputs_by_mu_b, algorithms, n_grid) -> list[dict]:
    """Prediction rows {n, alg, e_term, f_term, total, upper_bound, steady_state}."""
    rows = []
    inputs = inputs_by_mu_b
    n_grid = np.asarray(n_grid)
    for alg in algorithms:
        pred = predict_er(inputs, alg, n_grid)
        bound = upper_bound(inputs, alg, n_grid)
        steady = predict_steady_state(inputs, alg)
        for i, n in enumerate(n_grid):
            rows.append({"n": int(n), "alg": alg,
                         "e_term": pred.e_term[i], "f_term": pred.f_term[i],
                         "total": pred.total[i], "upper_bound": bound[i],
                         "steady_state": steady})
    return rows


def oracle_table(info, cm, mu, B, algorithms, n_grid,
                 init_kind="exact", init_sigma=0.0) -> list[dict]:
    """Exact-series rows {n, alg, er_oracle} on the same (n, alg) key."""
    rows = []
    n_grid = np.asarray(n_grid)
    n_max = int(n_grid.max())
    for alg in algorithms:
        series = moment_oracle.propagate(info, cm, alg, mu, B, n_max,
                                         init_kind=init_kind,
                                         init_sigma=init_sigma)
        for n in n_grid:
            rows.append({"n": int(n), "alg": alg, "er_oracle": series.er[int(n)]})
    return rows


def simulate_table(stats) -> list[dict]:
    """Ensemble rows in the common trajectory-output schema."""
    rows = []
    for i, n in enumerate(stats.n):
        rows.append({"step": int(n),
                     "er_mean": stats.er_mean[i],
                     "er_stderr": stats.er_stderr[i],
                     "consensus_distance_mean": stats.cons_mean[i],
                     "escaped_fraction": stats.escaped_fraction[i],
                     "diverged_fraction": stats.diverged_fraction[i]})
    return rows


def compare_experiment(model, info, cm, run_cfg: RunConfig, reps: int,
                       algorithms=ALGORITHMS, workers=None) -> list[dict]:
    """Theory vs oracle vs Monte Carlo on one quadratic model.

    The horizon is ceil(5/mu) at stride ``record_every``; requires the
    additive-noise quadratic regime where the oracle is exact.
    """
    if model.family != "quadratic" or model.noise_mode != "additive":
        raise ConfigError("compare requires an additive-noise quadratic model")
    mu, B = run_cfg.mu, run_cfg.B
    n_max = int(np.ceil(5.0 / mu))
    cfg = RunConfig(mu=mu, B=B, n_steps=n_max + 1, init_kind=run_cfg.init_kind,
                    init_sigma=run_cfg.init_sigma, seed=run_cfg.seed,
                    record_every=run_cfg.record_every,
                    div_threshold=run_cfg.div_threshold)
    spectral = spectral_decompose(cm)
    inputs = TheoryInputs.from_components(info, spectral, mu, B)
    n_grid = np.arange(0, n_max + 1, run_cfg.record_every)
    rows = []
    for alg in algorithms:
        pred = predict_er(inputs, alg, n_grid)
        series = moment_oracle.propagate(info, cm, alg, mu, B, n_max,
                                         init_kind=cfg.init_kind,
                                         init_sigma=cfg.init_sigma)
        stats = ensemble_excess_risk(model, info, cm, alg, cfg, reps,
                                     workers=workers)
        for i, n in enumerate(n_grid):
            rows.append({"n": int(n), "alg": alg,
                         "er_theory": pred.total[i],
                         "er_oracle": series.er[int(n)],
                         "er_mc": stats.er_mean[int(n)],
                         "er_mc_stderr": stats.er_stderr[int(n)]})
    return rows


def mu_sweep(info, cm, mu_grid, eta: float, c: float,
             alg: str = "consensus") -> tuple[list[dict], float]:
    """Theory-vs-oracle relative error along a decreasing step-size grid.

    The batch size is coupled to the step size as ``B = ceil(c mu^-eta)``
    and each point is evaluated at ``n = ceil(1/mu)``. Returns the rows and
    the fitted log-log slope of the relative error (about one when the
    dominant-term gap shrinks linearly with the step size).
    """
    mu_grid = list(mu_grid)
    if len(mu_grid) < 3:
        raise ConfigError("mu_grid needs at least 3 points")
    if any(b <= a for a, b in zip(mu_grid[1:], mu_grid[:-1])):
        raise ConfigError("mu_grid must be strictly decreasing")
    spectral = spectral_decompose(cm)
    rows = []
    rel_errs = []
    for mu in mu_grid:
        B = int(np.ceil(c * mu ** (-eta)))
        n_eval = int(np.ceil(1.0 / mu))
        inputs = TheoryInputs.from_components(info, spectral, mu, B)
        pred = predict_er(inputs, alg, n_eval).total
        series = moment_oracle.propagate(info, cm, alg, mu, B, n_eval)
        exact = series.er[n_eval]
        rel_errs.append(abs(pred - exact) / exact)
        rows.append({"mu": mu, "B": B, "n_eval": n_eval,
                     "rel_err_theory_vs_oracle": rel_errs[-1]})
    slope = float(np.polyfit(np.log(mu_grid), np.log(rel_errs), 1)[0])
    return rows, slope


def is_large_batch(inputs: TheoryInputs, alg: str, n: int) -> bool:
    """Operational large-batch test: the mu^2 term dominates mu/B by 10x."""
    pred = predict_er(inputs, alg, n)
    return bool(pred.f_term >= LARGE_BATCH_FACTOR * pred.e_term)


def escape_study(model, info, cm, base_cfg: RunConfig, cells, reps: int,
                 algorithms=ALGORITHMS, workers=None) -> list[dict]:
    """Escape fractions and mean excess risk per algorithm at matched cells.

    ``cells`` is a sequence of (mu, B) pairs; rows are keyed by
    (alg, mu, B, step) at stride ``record_every``.
    """
    if model.family != "double_well":
        raise ConfigError("escape study requires the double-well family")
    rows = []
    for mu, B in cells:
        cfg = RunConfig(mu=mu, B=int(B), n_steps=base_cfg.n_steps,
                        init_kind=base_cfg.init_kind,
                        init_sigma=base_cfg.init_sigma, seed=base_cfg.seed,
                        record_every=base_cfg.record_every,
                        div_threshold=base_cfg.div_threshold,
                        lr_drop_fracs=base_cfg.lr_drop_fracs)
        for alg in algorithms:
            stats = escape_statistics(model, info, cm, alg, cfg, reps,
                                      workers=workers)
            ens = stats.ensemble
            for n in range(0, cfg.n_steps, cfg.record_every):
                rows.append({"alg": alg, "mu": mu, "B": int(B), "step": n,
                             "escape_fraction": stats.escape_fraction_by_step[n],
                             "er_mean": ens.er_mean[n]})
    return rows


def two_proportion_z(count1: int, n1: int, count2: int, n2: int) -> float:
    """z statistic for p1 - p2 under the pooled null; 0 when both are empty."""
    pooled = (count1 + count2) / (n1 + n2)
    var = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)
    if var == 0.0:
        return 0.0
    return (count1 / n1 - count2 / n2) / np.sqrt(var)


def flatness_profile(model: NetworkRiskModel, w, n_dirs: int, alpha_grid,
                     rng: np.random.Generator) -> list[dict]:
    """Risk profile J(w + alpha v) over random directions matching ||w||.

    Directions are drawn isotropically and rescaled to the norm of ``w``
    (unit norm when w = 0); rows carry the mean and standard error over
    directions at each alpha.
    """
    if n_dirs < 1:
        raise ConfigError("n_dirs must be >= 1")
    w = np.asarray(w, dtype=float)
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    dirs = rng.standard_normal((n_dirs, w.size))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    target = np.linalg.norm(w)
    if target == 0.0:
        target = 1.0
    dirs = dirs / norms * target
    rows = []
    for alpha in alpha_grid:
        vals = np.empty(n_dirs)
        for i in range(n_dirs):
            vals[i], _ = model.global_eval(w + alpha * dirs[i])
        stderr = (vals.std(ddof=1) / np.sqrt(n_dirs)) if n_dirs > 1 else 0.0
        rows.append({"alpha": float(alpha), "j_mean": float(vals.mean()),
                     "j_stderr": float(stderr)})
    return rows
