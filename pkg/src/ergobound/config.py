"""JSON run configuration: schema, validation with field paths, object construction."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .drift import DriftSpec, constant_drift, linear_drift, polynomial_drift, zero_drift
from .linop import LinearModel
from .pipeline import BoundSettings
from .presets import PRESETS, preset

_matrix = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number"}}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_constants = {k: {"type": "number"} for k in ("K", "m", "k1", "k2", "k3", "s", "eps")}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": sorted(PRESETS)},
                "params": {"type": "object"},
                "A": _matrix,
                "Q": _matrix,
                "Qhalf": _matrix,
            },
            "oneOf": [
                {"required": ["preset"], "not": {"anyOf": [{"required": ["A"]}, {"required": ["Q"]}, {"required": ["Qhalf"]}]}},
                {"required": ["A"], "not": {"required": ["preset"]},
                 "anyOf": [{"required": ["Q"]}, {"required": ["Qhalf"]}]},
            ],
        },
        "drift": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["preset", "zero", "constant", "linear", "polynomial"]},
                "c": _vector,
                "L": _matrix,
                "coeffs": _vector,
                "symmetric": {"type": "boolean"},
                "name": {"type": "string"},
                **_constants,
            },
            "allOf": [
                {"if": {"properties": {"kind": {"const": "constant"}}}, "then": {"required": ["c"]}},
                {"if": {"properties": {"kind": {"const": "linear"}}}, "then": {"required": ["L"]}},
                {"if": {"properties": {"kind": {"const": "polynomial"}}}, "then": {"required": ["coeffs"]}},
            ],
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"M": {"type": "integer", "minimum": 8}, "eps_end": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.1}},
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": _posint,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "confidence": {"type": "number", "exclusiveMinimum": 0.5, "exclusiveMaximum": 1},
                "batch_size": _posint,
                "workers": _posint,
            },
        },
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "R": _pos,
                "r": _pos,
                "radius_margin": {"type": "number", "exclusiveMinimum": 1},
                "rho_policy": {"enum": ["argmax", "midpoint"]},
                "theta_grid": {"type": "array", "minItems": 1,
                               "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
                "M_cap": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "moment_budget": _posint,
                "k_budget": _posint,
                "n_delta": _posint,
                "delta_method": {"enum": ["pointwise", "packaged"]},
                "gap_p": {"type": "array", "items": {"type": "number", "minimum": 1}},
                "uniform": {"type": "boolean"},
                "check_symmetry": {"type": "boolean"},
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h": _pos,
                "T_max": _pos,
                "n_paths": _posint,
                "times": {"type": "array", "minItems": 1, "items": _pos},
                "x_list": {"type": "array", "minItems": 1, "items": _vector},
                "burn_in": _pos,
                "alphas": _vector,
                "alpha0": {"type": "number"},
                "nbins": {"type": "integer", "minimum": 2},
            },
        },
        "density": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "reference": {"enum": ["h", "vs_mu1", "vs_lebesgue"]},
                "n_paths": _posint,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv"]}, "minItems": 1},
            },
        },
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["subcommand", "verdict", "seed", "config_hash", "version", "results"],
    "properties": {
        "subcommand": {"enum": ["check", "bridge-validate", "density", "lower-bound", "bounds", "simulate",
                                "ergodicity-report", "sweep"]},
        "verdict": {"enum": ["PASS", "FAIL"]},
        "seed": {"type": "integer", "minimum": 0},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "version": {"type": "string"},
        "results": {"type": "object"},
        "notes": {"type": "array", "items": {"type": "string"}},
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def _path(err: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def validate(raw: dict, schema: dict = CONFIG_SCHEMA) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(list(e.absolute_path)), str(e.absolute_path)))
    if errors:
        err = max(errors, key=lambda e: len(list(e.absolute_path)))
        raise ConfigError(err.message, _path(err))


def content_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of the configuration."""
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")).hexdigest()


@dataclass
class RunConfig:
    raw: dict
    model: LinearModel
    drift: DriftSpec
    seed: int
    n_paths: int
    confidence: float
    batch_size: int
    workers: int
    grid_M: int
    eps_end: float
    bounds: BoundSettings
    simulation: dict
    density: dict
    output_dir: str
    formats: tuple

    @property
    def hash(self) -> str:
        return content_hash(self.raw)


def _build_model_drift(raw: dict) -> tuple[LinearModel, DriftSpec]:
    mblock = raw["model"]
    dblock = raw.get("drift", {"kind": "preset"})
    base_drift = None
    try:
        if "preset" in mblock:
            model, base_drift = preset(mblock["preset"], **mblock.get("params", {}))
        else:
            model = LinearModel.from_matrices(mblock["A"], Q=mblock.get("Q"), Qhalf=mblock.get("Qhalf"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "$.model") from exc
    d = model.d
    consts = {k: dblock[k] for k in ("K", "m", "k1", "k2", "k3", "s", "eps", "symmetric", "name") if k in dblock}
    kind = dblock["kind"]
    try:
        if kind == "preset":
            if base_drift is None:
                raise ConfigError("drift kind 'preset' needs a model preset", "$.drift.kind")
            drift = base_drift.with_constants(**consts) if consts else base_drift
        elif kind == "zero":
            drift = zero_drift(d).with_constants(**consts)
        elif kind == "constant":
            drift = constant_drift(dblock["c"]).with_constants(**consts)
        elif kind == "linear":
            drift = linear_drift(dblock["L"]).with_constants(**consts)
        else:
            drift = polynomial_drift(dblock["coeffs"], d=d, **consts)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "$.drift") from exc
    probe = drift(np.zeros((1, d)))
    if probe.shape != (1, d):
        raise ConfigError(f"drift maps R^{d} to shape {probe.shape[1:]}", "$.drift")
    return model, drift


def load_config(source, seed: int | None = None, out: str | None = None) -> RunConfig:
    """Parse and validate a config from a path or a dict; ``seed``/``out`` override the file."""
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno} column {exc.colno})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    validate(raw)
    model, drift = _build_model_drift(raw)
    mc = raw.get("mc", {})
    grid = raw.get("grid", {})
    b = dict(raw.get("bounds", {}))
    for key in ("theta_grid", "gap_p"):
        if key in b:
            b[key] = tuple(b[key])
    settings = BoundSettings(**b, confidence=mc.get("confidence", 0.99), grid_M=grid.get("M", 512),
                             eps_end=grid.get("eps_end", 1e-3))
    output = raw.get("output", {})
    return RunConfig(
        raw=raw,
        model=model,
        drift=drift,
        seed=int(seed if seed is not None else mc.get("seed", 0)),
        n_paths=int(mc.get("n_paths", 100_000)),
        confidence=float(mc.get("confidence", 0.99)),
        batch_size=int(mc.get("batch_size", 8192)),
        workers=int(mc.get("workers", 1)),
        grid_M=int(grid.get("M", 512)),
        eps_end=float(grid.get("eps_end", 1e-3)),
        bounds=settings,
        simulation=dict(raw.get("simulation", {})),
        density=dict(raw.get("density", {})),
        output_dir=out or output.get("directory", "ergobound-out"),
        formats=tuple(output.get("formats", ("json", "csv"))),
    )
