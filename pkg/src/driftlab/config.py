"""JSON experiment configuration: schema, validation and object builders.

Configs are strict: unknown keys are rejected so a typo in a step size or
batch size cannot silently change a scaling experiment. One master seed
derives every sub-stream (topology draw, model data, Monte Carlo
replications, flatness directions), so a config plus its seed reproduces a
run exactly.
"""

from __future__ import annotations

import json

import jsonschema
import numpy as np

from .dynamics import ALGORITHMS, RunConfig
from .exceptions import ConfigError
from .risk_models import make_double_well_network, make_quadratic_network
from .topology import Graph, build_combination_matrix, random_connected_graph

_SEED_TAGS = {"topology": 1, "model": 2, "mc": 3, "flatness": 4}


def derive_seed(seed: int, tag: str) -> int:
    """Deterministic sub-seed for a named stream of the run."""
    ss = np.random.SeedSequence((int(seed), _SEED_TAGS[tag]))
    return int(ss.generate_state(1, np.uint64)[0])


_ALG_ENUM = {"type": "string", "enum": list(ALGORITHMS)}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "algorithms": {"type": "array", "items": _ALG_ENUM, "minItems": 1,
                       "uniqueItems": True},
        "reps": {"type": "integer", "minimum": 2},
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "K"],
            "properties": {
                "kind": {"type": "string",
                         "enum": ["ring", "metropolis", "centralized", "random"]},
                "K": {"type": "integer", "minimum": 1},
                "edges": {"type": "array",
                          "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                    "items": {"type": "integer", "minimum": 0}}},
                "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"type": "string", "enum": ["quadratic", "double_well"]},
                "M": {"type": "integer", "minimum": 1},
                "hessian_mode": {"type": "string",
                                 "enum": ["common", "heterogeneous"]},
                "hess_eig_range": {"type": "array", "minItems": 2, "maxItems": 2,
                                   "items": {"type": "number", "exclusiveMinimum": 0}},
                "minimizer_spread": {"type": "number", "minimum": 0},
                "noise_mode": {"type": "string", "enum": ["additive", "dataset"]},
                "noise_scale": {"type": "number", "minimum": 0},
                "noise_kind": {"type": "string", "enum": ["isotropic", "spd"]},
                "dataset_size": {"type": "integer", "minimum": 1},
                "tilts": {
                    "oneOf": [
                        {"type": "array", "items": {"type": "number"}},
                        {"type": "object", "additionalProperties": False,
                         "required": ["kind", "amplitude"],
                         "properties": {
                             "kind": {"type": "string",
                                      "enum": ["cosine", "alternating"]},
                             "amplitude": {"type": "number"}}},
                    ],
                },
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mu", "B"],
            "properties": {
                "mu": {"type": "number", "minimum": 0},
                "B": {"type": "integer", "minimum": 1},
                "n_steps": {"type": "integer", "minimum": 1},
                "record_every": {"type": "integer", "minimum": 1},
                "div_threshold": {"type": "number", "exclusiveMinimum": 0},
                "lr_drop_fracs": {"type": "array",
                                  "items": {"type": "number", "minimum": 0,
                                            "maximum": 1}},
                "init": {"type": "object", "additionalProperties": False,
                         "required": ["kind"],
                         "properties": {
                             "kind": {"type": "string",
                                      "enum": ["exact", "gaussian"]},
                             "sigma0": {"type": "number", "minimum": 0}}},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mu_grid"],
            "properties": {
                "mu_grid": {"type": "array", "minItems": 3,
                            "items": {"type": "number", "exclusiveMinimum": 0}},
                "eta": {"type": "number", "minimum": 0},
                "c": {"type": "number", "exclusiveMinimum": 0},
                "alg": _ALG_ENUM,
            },
        },
        "escape": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cells": {"type": "array", "minItems": 1,
                          "items": {"type": "object", "additionalProperties": False,
                                    "required": ["mu", "B"],
                                    "properties": {
                                        "mu": {"type": "number",
                                               "exclusiveMinimum": 0},
                                        "B": {"type": "integer", "minimum": 1}}}},
            },
        },
        "flatness": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_dirs", "alpha"],
            "properties": {
                "n_dirs": {"type": "integer", "minimum": 1},
                "alpha": {
                    "oneOf": [
                        {"type": "array", "items": {"type": "number"},
                         "minItems": 1},
                        {"type": "object", "additionalProperties": False,
                         "required": ["lo", "hi", "num"],
                         "properties": {"lo": {"type": "number"},
                                        "hi": {"type": "number"},
                                        "num": {"type": "integer", "minimum": 2}}},
                    ],
                },
                "at": {"oneOf": [{"type": "string", "enum": ["w_star"]},
                                 {"type": "array",
                                  "items": {"type": "number"}}]},
            },
        },
        "theory": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_max": {"type": "integer", "minimum": 0}},
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_max": {"type": "integer", "minimum": 0}},
        },
    },
}


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config key {path!r}: {exc.message}") from None


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    validate_config(cfg)
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply dotted-key overrides like ``run.mu=0.01``; values parse as JSON."""
    out = json.loads(json.dumps(cfg))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    validate_config(out)
    return out


def require_sections(cfg: dict, names) -> None:
    missing = [name for name in names if name not in cfg]
    if missing:
        raise ConfigError(f"config missing required section(s): {missing}")


def build_topology(cfg: dict, seed: int):
    spec = cfg["topology"]
    kind, K = spec["kind"], spec["K"]
    if kind == "ring":
        return build_combination_matrix("ring", K=K)
    if kind == "centralized":
        return build_combination_matrix("centralized", K=K)
    if kind == "metropolis":
        if "edges" not in spec:
            raise ConfigError("config key 'topology.edges': required for "
                              "the metropolis kind")
        graph = Graph.from_edges(K, spec["edges"])
        return build_combination_matrix("metropolis", graph=graph)
    graph = random_connected_graph(K, p=spec.get("p", 0.3),
                                   seed=derive_seed(seed, "topology"))
    return build_combination_matrix("metropolis", graph=graph)


def _tilts_from_spec(spec, K: int) -> np.ndarray:
    if isinstance(spec, list):
        b = np.asarray(spec, dtype=float)
        if b.size != K:
            raise ConfigError(f"config key 'model.tilts': expected {K} values, "
                              f"got {b.size}")
        return b
    amp = float(spec["amplitude"])
    if spec["kind"] == "cosine":
        b = amp * np.cos(2.0 * np.pi * np.arange(K) / K)
        return b - b.mean()
    signs = np.where(np.arange(K) % 2 == 0, 1.0, -1.0)
    if K % 2 == 1:
        signs[-1] = 0.0
    return amp * (signs - signs.mean())


def build_model(cfg: dict, K: int, seed: int):
    spec = cfg["model"]
    model_seed = derive_seed(seed, "model")
    if spec["family"] == "quadratic":
        return make_quadratic_network(
            K=K, M=spec.get("M", 1),
            hessian_mode=spec.get("hessian_mode", "common"),
            minimizer_spread=spec.get("minimizer_spread", 1.0),
            dataset_size=spec.get("dataset_size"),
            noise_mode=spec.get("noise_mode", "additive"),
            noise_scale=spec.get("noise_scale", 1.0),
            noise_kind=spec.get("noise_kind", "isotropic"),
            hess_eig_range=tuple(spec.get("hess_eig_range", (0.5, 2.0))),
            seed=model_seed)
    if "tilts" not in spec:
        raise ConfigError("config key 'model.tilts': required for double_well")
    tilts = _tilts_from_spec(spec["tilts"], K)
    return make_double_well_network(K=K, tilts=tilts,
                                    dataset_size=spec.get("dataset_size", 64),
                                    noise_scale=spec.get("noise_scale", 1.0),
                                    seed=model_seed)


def build_run_config(cfg: dict, seed: int) -> RunConfig:
    spec = cfg.get("run", {})
    init = spec.get("init", {"kind": "exact"})
    return RunConfig(mu=spec["mu"], B=spec["B"],
                     n_steps=spec.get("n_steps", 1),
                     init_kind=init.get("kind", "exact"),
                     init_sigma=init.get("sigma0", 0.0),
                     seed=derive_seed(seed, "mc"),
                     record_every=spec.get("record_every", 1),
                     div_threshold=spec.get("div_threshold", 1e12),
                     lr_drop_fracs=tuple(spec.get("lr_drop_fracs", ())))


def alpha_grid_from_spec(spec) -> np.ndarray:
    if isinstance(spec, list):
        return np.asarray(spec, dtype=float)
    return np.linspace(spec["lo"], spec["hi"], spec["num"])
