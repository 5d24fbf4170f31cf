"""Experiment configuration: TOML files validated against a strict schema.

Every run is driven by one config file; unknown keys are rejected with a
pointered error so typos fail fast.  Defaults reproduce the reference
experiment: a 6-site chain quenched at lam=0.2, delta_b=0.2 to T=2.5 with
samples every 0.1, Trotter steps tau in {0.1, 0.01}, and the published
hardware parameters.
"""

from __future__ import annotations

import copy
import json
import sys

import jsonschema

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "DEFAULT_CONFIG",
    "CONFIG_SCHEMA",
    "load_config",
    "validate_config",
    "apply_override",
]


class ConfigError(ValueError):
    """Configuration file or override is invalid."""


DEFAULT_CONFIG = {
    "device": {
        "frequency_1": 5.634,
        "anharmonicity_1": -0.266,
        "frequency_2": 5.447,
        "anharmonicity_2": -0.270,
        "levels": 5,
    },
    "controls": {
        "saturation_mode": "tanh",
        "microwave_bound": 0.08,
        "detuning_bound": 0.5,
        "coupling_bound": 0.01,
        "ramp_fraction": 0.3,
    },
    "optimizer": {
        "max_iterations": 2000,
        "grad_tol": 1e-9,
        "rel_obj_tol": 1e-8,
        "memory": 10,
        "abs_tol": 1e-8,
        "rel_tol": 1e-8,
        "coarse_abs_tol": 1e-6,
        "coarse_rel_tol": 1e-6,
        "n_seeds": 4,
        "rng_seed": 2021,
    },
    "optimize": {
        "targets": ["x_field", "zx_rotation", "zy_rotation", "xyz_bond"],
        "taus": [0.1, 0.01],
        "infidelity_targets": {
            "x_field": 1e-8,
            "zx_rotation": 1e-4,
            "zy_rotation": 1e-3,
            "xyz_bond_0.1": 1e-4,
            "xyz_bond_0.01": 1e-6,
        },
    },
    "quench": {
        "n_sites": 6,
        "lam": 0.2,
        "delta_b": 0.2,
        "n_x": [1, 2, 3, 4, 5],
        "taus": [0.1, 0.01],
        "t_final": 2.5,
        "sample_spacing": 0.1,
    },
    "observables": {
        "directions": ["x", "y", "z"],
        "string_k": 1,
        "string_l": [2, 3, 4, 5, 6],
        "shots": 0,
        "shot_seed": 7,
    },
    "simulate": {
        "gate_source": "ideal",
        "gate_tolerance": 1e-10,
    },
    "output": {
        "directory": "results",
    },
}


def _num(extra=None):
    base = {"type": "number"}
    if extra:
        base.update(extra)
    return base


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "device": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "frequency_1": _num({"exclusiveMinimum": 0}),
                "anharmonicity_1": _num({"exclusiveMaximum": 0}),
                "frequency_2": _num({"exclusiveMinimum": 0}),
                "anharmonicity_2": _num({"exclusiveMaximum": 0}),
                "levels": {"type": "integer", "minimum": 3},
            },
        },
        "controls": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "saturation_mode": {"enum": ["tanh", "logistic-printed"]},
                "microwave_bound": _num({"exclusiveMinimum": 0}),
                "detuning_bound": _num({"exclusiveMinimum": 0}),
                "coupling_bound": _num({"exclusiveMinimum": 0}),
                "ramp_fraction": _num({"exclusiveMinimum": 0, "maximum": 0.5}),
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 1},
                "grad_tol": _num({"exclusiveMinimum": 0}),
                "rel_obj_tol": _num({"exclusiveMinimum": 0}),
                "memory": {"type": "integer", "minimum": 1},
                "abs_tol": _num({"exclusiveMinimum": 0}),
                "rel_tol": _num({"exclusiveMinimum": 0}),
                "coarse_abs_tol": _num({"exclusiveMinimum": 0}),
                "coarse_rel_tol": _num({"exclusiveMinimum": 0}),
                "n_seeds": {"type": "integer", "minimum": 1},
                "rng_seed": {"type": "integer", "minimum": 0},
            },
        },
        "optimize": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "targets": {
                    "type": "array",
                    "items": {
                        "enum": [
                            "x_field",
                            "zx_rotation",
                            "zy_rotation",
                            "xyz_bond",
                        ]
                    },
                    "minItems": 1,
                },
                "taus": {
                    "type": "array",
                    "items": _num({"exclusiveMinimum": 0}),
                    "minItems": 1,
                },
                "infidelity_targets": {
                    "type": "object",
                    "additionalProperties": _num({"exclusiveMinimum": 0}),
                },
            },
        },
        "quench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_sites": {"type": "integer", "minimum": 2, "maximum": 8},
                "lam": _num(),
                "delta_b": _num(),
                "n_x": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": 1,
                },
                "taus": {
                    "type": "array",
                    "items": _num({"exclusiveMinimum": 0}),
                    "minItems": 1,
                },
                "t_final": _num({"exclusiveMinimum": 0}),
                "sample_spacing": _num({"exclusiveMinimum": 0}),
            },
        },
        "observables": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directions": {
                    "type": "array",
                    "items": {"enum": ["x", "y", "z"]},
                    "minItems": 1,
                },
                "string_k": {"type": "integer", "minimum": 1},
                "string_l": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 2},
                    "minItems": 1,
                },
                "shots": {"type": "integer", "minimum": 0},
                "shot_seed": {"type": "integer", "minimum": 0},
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gate_source": {"enum": ["ideal", "extracted"]},
                "gate_tolerance": _num({"exclusiveMinimum": 0}),
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string", "minLength": 1},
            },
        },
    },
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict):
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: e.json_path)
    if errors:
        err = errors[0]
        raise ConfigError(f"config error at {err.json_path}: {err.message}")


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply one "dotted.key=value" override; values parse as JSON with a
    bare-string fallback."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"override {key!r} does not address a config table")
        node = node[part]
    node[parts[-1]] = value
    return cfg


def load_config(path=None, overrides=()) -> dict:
    """Defaults, overlaid with a TOML file and key=value overrides,
    validated against the schema."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}")
        cfg = _deep_merge(cfg, user)
    for assignment in overrides:
        apply_override(cfg, assignment)
    validate_config(cfg)
    return cfg
