"""Run configuration: JSON schema, default expansion, dotted overrides.

A run config has sections ``data``, ``synth``, ``model``, ``train`` (with
``sar2opt`` and ``cloud`` subsections), ``eval``, ``ablate`` and ``output``.
Unknown keys are rejected everywhere; every command writes the fully resolved
document next to its outputs.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

import jsonschema

from .errors import ConfigurationError
from .training import LOSS_PRESETS, TrainConfig

OUTPUT_ROOT_ENV = "CLOUDGAN_OUTPUT_ROOT"

_STAGE_TRAIN_PROPS = {
    "lr": {"type": "number", "exclusiveMinimum": 0},
    "beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "batch_size": {"type": "integer", "minimum": 1},
    "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "epochs": {"type": "integer", "minimum": 0},
    "max_steps": {"type": ["integer", "null"], "minimum": 0},
    "seed": {"type": "integer", "minimum": 0},
    "lambda_l1": {"type": "number", "minimum": 0},
    "lambda_ssim": {"type": "number", "minimum": 0},
    "cgan_enabled": {"type": "boolean"},
    "single_threaded": {"type": "boolean"},
    "checkpoint_every": {"type": "integer", "minimum": 0},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "root": {"type": "string"},
                "split_seed": {"type": "integer", "minimum": 0},
                "train_fraction": {"type": "number", "minimum": 0.0,
                                   "maximum": 1.0},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "coverages": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "number", "minimum": 0.0,
                              "maximum": 0.95},
                },
                "seed": {"type": "integer", "minimum": 0},
                "edge_width": {"type": "number", "exclusiveMinimum": 0},
                "region_tau": {"type": "number", "exclusiveMinimum": 0,
                               "exclusiveMaximum": 1},
                "asset_dir": {"type": ["string", "null"]},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bottleneck": {"enum": ["drib", "unet"]},
                "base_channels": {"type": "integer", "minimum": 1},
                "unet_extra_depth": {"type": "integer", "minimum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sar2opt": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": dict(_STAGE_TRAIN_PROPS),
                },
                "cloud": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        **_STAGE_TRAIN_PROPS,
                        "use_sar2opt_stage": {"type": "boolean"},
                        "stage1_checkpoint": {"type": ["string", "null"]},
                    },
                },
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "region_tau": {"type": "number", "exclusiveMinimum": 0,
                               "exclusiveMaximum": 1},
                "max_i": {"type": "number", "exclusiveMinimum": 0},
                "ssim_window": {"type": "integer", "minimum": 3},
                "ssim_sigma": {"type": "number", "exclusiveMinimum": 0},
                "split": {"enum": ["train", "test"]},
                "grid_rows": {"type": "integer", "minimum": 1},
            },
        },
        "ablate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bottlenecks": {"type": "array", "minItems": 1,
                                "items": {"enum": ["drib", "unet"]}},
                "sar2opt_flags": {"type": "array", "minItems": 1,
                                  "items": {"type": "boolean"}},
                "loss_presets": {"type": "array", "minItems": 1,
                                 "items": {"enum": sorted(LOSS_PRESETS)}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "run_name": {"type": ["string", "null"]},
            },
        },
    },
}

_STAGE_TRAIN_DEFAULTS = {
    "lr": 2e-4, "beta1": 0.5, "beta2": 0.999, "batch_size": 4,
    "dropout": 0.5, "epochs": 1, "max_steps": None, "seed": 0,
    "lambda_l1": 100.0, "lambda_ssim": 100.0, "cgan_enabled": True,
    "single_threaded": True, "checkpoint_every": 0,
}


def defaults() -> dict:
    return {
        "data": {"root": "data", "split_seed": 0, "train_fraction": 0.8},
        "synth": {"coverages": [0.1, 0.3, 0.5, 0.7], "seed": 0,
                  "edge_width": 0.08, "region_tau": 0.1, "asset_dir": None},
        "model": {"bottleneck": "drib", "base_channels": 64,
                  "unet_extra_depth": 5},
        "train": {
            "sar2opt": dict(_STAGE_TRAIN_DEFAULTS),
            "cloud": {**_STAGE_TRAIN_DEFAULTS, "use_sar2opt_stage": True,
                      "stage1_checkpoint": None},
        },
        "eval": {"region_tau": 0.1, "max_i": 1.0, "ssim_window": 11,
                 "ssim_sigma": 1.5, "split": "test", "grid_rows": 4},
        "ablate": {"bottlenecks": ["drib", "unet"],
                   "sar2opt_flags": [True, False],
                   "loss_presets": ["L1", "SSIM+L1"]},
        "output": {"dir": os.environ.get(OUTPUT_ROOT_ENV, "runs"),
                   "run_name": None},
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``--set a.b.c=value`` pairs; values parse as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must be key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigurationError(
                    f"override {dotted!r} crosses a non-object value")
        node[keys[-1]] = value
    return doc


def load_config(path: str | Path | None, overrides: list[str] | None = None,
                ) -> dict:
    """Read, override, validate against the schema, and expand defaults."""
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}"
                                     ) from exc
    else:
        user = {}
    user = apply_overrides(user, overrides or [])
    try:
        jsonschema.validate(user, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}"
                                 ) from exc
    return _deep_merge(defaults(), user)


def make_train_config(resolved: dict, stage: str) -> TrainConfig:
    section = "sar2opt" if stage == "sar2opt" else "cloud"
    fields = dict(resolved["train"][section])
    fields.pop("stage1_checkpoint", None)
    model = resolved["model"]
    return TrainConfig(stage=stage, bottleneck=model["bottleneck"],
                       base_channels=model["base_channels"],
                       unet_extra_depth=model["unet_extra_depth"], **fields)


def run_dir(resolved: dict, command: str) -> Path:
    base = Path(resolved["output"]["dir"])
    name = resolved["output"]["run_name"]
    return base / (name if name else command)


def write_resolved(resolved: dict, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "resolved.json"
    path.write_text(json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    return path
