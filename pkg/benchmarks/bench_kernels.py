#!/usr/bin/env python3
"""Benchmark: compiled kernel core vs the pure-numpy fallback.

Runs the two hot simulation kernels on representative ensemble workloads
and prints per-backend timings. Usage:

    python benchmarks/bench_kernels.py [--reps 4096] [--steps 400]
"""

import argparse
import time

import numpy as np

import driftlab as dl
from driftlab import dynamics
from driftlab._kernels import get_backend


def _time(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_quadratic(backend, reps, steps):
    K, M = 8, 4
    model = dl.make_quadratic_network(K, M, hessian_mode="common",
                                      minimizer_spread=1.0,
                                      noise_mode="additive", noise_scale=1.0,
                                      seed=7)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=K)
    cfg = dl.RunConfig(mu=0.02, B=2, n_steps=steps, seed=11)
    w0, noise = dynamics._draw_quadratic_chunk(model, info, cfg, "diffusion",
                                               0, reps, steps)
    mu = cfg.mu_schedule()

    def run():
        backend.simulate_quadratic(w0, cm.A, model.H, model.w_loc, info.H_bar,
                                   info.w_star, noise, mu, 2, 1e12)

    return _time(run)


def bench_double_well(backend, reps, steps):
    K = 8
    b = 2.0 * np.cos(2 * np.pi * np.arange(K) / K)
    b -= b.mean()
    model = dl.make_double_well_network(K, b, dataset_size=64,
                                        noise_scale=10.0, seed=3)
    info = dl.minimizer_summary(model)
    cm = dl.build_combination_matrix("ring", K=K)
    cfg = dl.RunConfig(mu=0.05, B=4, n_steps=steps, seed=11)
    w0, noise = dynamics._draw_double_well_chunk(model, info, cfg, "consensus",
                                                 0, reps, steps)
    mu = cfg.mu_schedule()
    lo, hi = info.basin

    def run():
        backend.simulate_double_well(w0, cm.A, model.b, noise, mu, 1, 0.0,
                                     lo, hi, 1e12)

    return _time(run)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=4096)
    parser.add_argument("--steps", type=int, default=400)
    args = parser.parse_args()

    backends = {"python": get_backend("python")}
    try:
        backends["compiled"] = get_backend("compiled")
    except ImportError:
        print("compiled kernels not built; benchmarking the fallback only")

    results = {}
    for case, bench in (("quadratic K=8 M=4", bench_quadratic),
                        ("double-well K=8", bench_double_well)):
        for name, backend in backends.items():
            results[(case, name)] = bench(backend, args.reps, args.steps)

    print(f"\nworkload: {args.reps} replications x {args.steps} steps "
          f"(active backend: {dl.backend_name()})")
    print(f"{'kernel':24s} {'python':>12s} {'compiled':>12s} {'speedup':>9s}")
    for case in ("quadratic K=8 M=4", "double-well K=8"):
        py = results[(case, "python")]
        cy = results.get((case, "compiled"))
        speed = f"{py / cy:8.1f}x" if cy else "      --"
        cy_s = f"{cy * 1e3:10.1f}ms" if cy else "        --"
        print(f"{case:24s} {py * 1e3:10.1f}ms {cy_s} {speed}")


if __name__ == "__main__":
    main()
