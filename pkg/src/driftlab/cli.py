"""Command-line entry point.

One subcommand per experiment; every run takes a JSON config (strictly
validated), optional dotted-key overrides, a seed and an output directory.
The effective post-override config is echoed into the output directory so
any run can be replayed from its own artifacts. Exit codes: 0 success,
1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
import tempfile

import numpy as np

from . import config as cfgmod
from . import experiments, moment_oracle
from .dynamics import ALGORITHMS, ensemble_excess_risk
from .exceptions import (ConfigError, DivergenceError, DriftLabError,
                         ModelError, NonConvergenceError, TopologyError)
from .risk_models import minimizer_summary
from .theory import TheoryInputs
from .topology import spectral_decompose, validate

SUBCOMMANDS = ("topology", "theory", "oracle", "simulate", "compare",
               "sweep", "escape", "flatness")

_REQUIRED = {
    "topology": ("topology",),
    "theory": ("topology", "model", "run"),
    "oracle": ("topology", "model", "run"),
    "simulate": ("topology", "model", "run", "reps"),
    "compare": ("topology", "model", "run", "reps"),
    "sweep": ("topology", "model", "sweep"),
    "escape": ("topology", "model", "run", "reps"),
    "flatness": ("topology", "model", "flatness"),
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftlab",
        description="centralized / consensus / diffusion SGD laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--output", "-o", default="out",
                       help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-key config override (repeatable)")
        p.add_argument("--deterministic", action="store_true",
                       help="suppress timestamp comments for byte-identical output")
        p.add_argument("--workers", type=int, default=None,
                       help="parallel worker count (default: available cores, "
                            "or DRIFTLAB_WORKERS)")
    return parser


def _effective_config(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    cfg = cfgmod.apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "seed" not in cfg:
        cfg["seed"] = secrets.randbelow(2 ** 63)
        print(f"seed: {cfg['seed']} (generated; pass --seed to replay)")
    cfgmod.require_sections(cfg, _REQUIRED[args.command])
    return cfg


def _echo_config(cfg: dict, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=outdir, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(outdir, "config.echo.json"))


def _algorithms(cfg) -> tuple:
    return tuple(cfg.get("algorithms", ALGORITHMS))


def _n_grid(cfg, n_max: int) -> np.ndarray:
    stride = cfg.get("run", {}).get("record_every", 1)
    return np.arange(0, n_max + 1, stride)


def _cmd_topology(cfg, args) -> None:
    cm = cfgmod.build_topology(cfg, cfg["seed"])
    report = validate(cm)
    sd = spectral_decompose(cm)
    cm.to_csv(os.path.join(args.output, "matrix.csv"))
    rows = [{"index": i + 1, "eigenvalue": lam}
            for i, lam in enumerate(sd.eigenvalues)]
    experiments.write_csv(os.path.join(args.output, "spectrum.csv"),
                          ["index", "eigenvalue"], rows,
                          deterministic=args.deterministic)
    status = "ok" if report.passed else f"FAILED {report.failures()}"
    print(f"topology: K={cm.K} kind={cm.kind} checks={status} "
          f"spectral_gap={sd.spectral_gap:.6g}")


def _theory_inputs(cfg, cm):
    model = cfgmod.build_model(cfg, cm.K, cfg["seed"])
    info = minimizer_summary(model)
    spectral = spectral_decompose(cm)
    return model, info, spectral


def _cmd_theory(cfg, args) -> None:
    cm = cfgmod.build_topology(cfg, cfg["seed"])
    _, info, spectral = _theory_inputs(cfg, cm)
    mu, B = cfg["run"]["mu"], cfg["run"]["B"]
    n_max = cfg.get("theory", {}).get("n_max", int(np.ceil(5.0 / mu)))
    inputs = TheoryInputs.from_components(info, spectral, mu, B)
    rows = experiments.theory_table(inputs, _algorithms(cfg), _n_grid(cfg, n_max))
    window = int(np.ceil(1.0 / mu))
    experiments.write_csv(
        os.path.join(args.output, "theory.csv"),
        ["n", "alg", "e_term", "f_term", "total", "upper_bound", "steady_state"],
        rows, deterministic=args.deterministic,
        comments=[f"dominant-term validity window: n <= ceil(1/mu) = {window}"])
    print(f"theory: {len(rows)} rows, validity window n <= {window}")


def _cmd_oracle(cfg, args) -> None:
    cm = cfgmod.build_topology(cfg, cfg["seed"])
    model, info, _ = _theory_inputs(cfg, cm)
    run = cfg["run"]
    mu, B = run["mu"], run["B"]
    n_max = cfg.get("oracle", {}).get("n_max", int(np.ceil(5.0 / mu)))
    init = run.get("init", {"kind": "exact"})
    rows = experiments.oracle_table(info, cm, mu, B, _algorithms(cfg),
                                    _n_grid(cfg, n_max),
                                    init_kind=init.get("kind", "exact"),
                                    init_sigma=init.get("sigma0", 0.0))
    experiments.write_csv(os.path.join(args.output, "oracle.csv"),
                          ["n", "alg", "er_oracle"], rows,
                          deterministic=args.deterministic)
    print(f"oracle: {len(rows)} rows written")


def _cmd_simulate(cfg, args) -> None:
    cm = cfgmod.build_topology(cfg, cfg["seed"])
    model, info, _ = _theory_inputs(cfg, cm)
    run_cfg = cfgmod.build_run_config(cfg, cfg["seed"])
    for alg in _algorithms(cfg):
        stats = ensemble_excess_risk(model, info, cm, alg, run_cfg,
                                     cfg["reps"], workers=args.workers)
        rows = experiments.simulate_table(stats)
        rows = rows[::run_cfg.record_every]
        path = os.path.join(args.output, f"simulate_{alg}.csv")
        experiments.write_csv(path, ["step", "er_mean", "er_stderr",
                                     "consensus_distance_mean",
                                     "escaped_fraction", "diverged_fraction"],
                              rows, deterministic=args.deterministic)
        print(f"simulate[{alg}]: final er = {stats.er_mean[-1]:.6g} "
              f"(backend {stats.backend})")


def _cmd_compare(cfg, args) -> None:
    cm = cfgmod.build_topology(cfg, cfg["seed"])
    model, info, _ = _theory_inputs(cfg, cm)
    run_cfg = cfgmod.build_run_config(cfg, cfg["seed"])
    rows = experiments.compare_experiment(model, info, cm, run_cfg,
                                          cfg["reps"], _algorithms(cfg),
                                          workers=args.workers)
    experiments.write_csv(os.path.join(args.output, "compare.csv"),
                          ["n", "alg", "er_theory", "er_oracle", "er_mc",
                           "er_mc_stderr"],
                          rows, deterministic=args.deterministic)
    print(f"compare: {len(rows)} rows written")


def _cmd_sweep(cfg, args) -> None:
    cm = cfgmod.build_topology(cfg, cfg["seed"])
    model, info, _ = _theory_inputs(cfg, cm)
    if model.family != "quadratic" or model.noise_mode != "additive":
        raise ConfigError("sweep requires an additive-noise quadratic model")
    spec = cfg["sweep"]
    rows, slope = experiments.mu_sweep(info, cm, spec["mu_grid"],
                                       eta=spec.get("eta", 0.0),
                                       c=spec.get("c", 1.0),
                                       alg=spec.get("alg", "consensus"))
    experiments.write_csv(os.path.join(args.output, "sweep.csv"),
                          ["mu", "B", "n_eval", "rel_err_theory_vs_oracle"],
                          rows, deterministic=args.deterministic)
    print(f"sweep: log-log slope of |theory - oracle| = {slope:.4f}")


def _cmd_escape(cfg, args) -> None:
    cm = cfgmod.build_topology(cfg, cfg["seed"])
    model, info, _ = _theory_inputs(cfg, cm)
    run_cfg = cfgmod.build_run_config(cfg, cfg["seed"])
    cells = [(c["mu"], c["B"]) for c in cfg.get("escape", {}).get(
        "cells", [{"mu": run_cfg.mu, "B": run_cfg.B}])]
    rows = experiments.escape_study(model, info, cm, run_cfg, cells,
                                    cfg["reps"], _algorithms(cfg),
                                    workers=args.workers)
    experiments.write_csv(os.path.join(args.output, "escape.csv"),
                          ["alg", "mu", "B", "step", "escape_fraction",
                           "er_mean"],
                          rows, deterministic=args.deterministic)
    final = {(r["alg"], r["mu"], r["B"]): r["escape_fraction"] for r in rows}
    for key, frac in sorted(final.items()):
        print(f"escape[{key[0]} mu={key[1]} B={key[2]}]: "
              f"final fraction {frac:.4f}")


def _cmd_flatness(cfg, args) -> None:
    cm = cfgmod.build_topology(cfg, cfg["seed"])
    model, info, _ = _theory_inputs(cfg, cm)
    spec = cfg["flatness"]
    at = spec.get("at", "w_star")
    w = info.w_star if at == "w_star" else np.asarray(at, dtype=float)
    rng = np.random.default_rng(cfgmod.derive_seed(cfg["seed"], "flatness"))
    rows = experiments.flatness_profile(model, w, spec["n_dirs"],
                                        cfgmod.alpha_grid_from_spec(spec["alpha"]),
                                        rng)
    experiments.write_csv(os.path.join(args.output, "flatness.csv"),
                          ["alpha", "j_mean", "j_stderr"], rows,
                          deterministic=args.deterministic)
    print(f"flatness: {len(rows)} alpha rows over {spec['n_dirs']} directions")


_HANDLERS = {
    "topology": _cmd_topology,
    "theory": _cmd_theory,
    "oracle": _cmd_oracle,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
    "escape": _cmd_escape,
    "flatness": _cmd_flatness,
}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = str(exc).replace("\n", " ")
    print(f"driftlab-error kind={kind} msg={msg!r}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.workers is not None:
        os.environ["DRIFTLAB_WORKERS"] = str(args.workers)
    try:
        cfg = _effective_config(args)
        _echo_config(cfg, args.output)
        _HANDLERS[args.command](cfg, args)
    except (ConfigError, TopologyError, ModelError) as exc:
        return _fail("validation", exc, 1)
    except (NonConvergenceError, DivergenceError) as exc:
        return _fail("runtime", exc, 2)
    except DriftLabError as exc:
        return _fail("runtime", exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
