"""Experiment configuration: JSON file -> validated dataclasses.

Validation happens before any computation.  Unknown keys are rejected, and
every error names the line of the offending entry in the source file.

Example::

    {
      "problem": {"family": "quadratic", "n": 20, "d": 5, "kappa": 10, "seed": 7},
      "sampler": {"kind": "iid_uniform"},
      "run": {"algorithm": "saga", "iterations": 2000},
      "replications": 3,
      "base_seed": 0
    }
"""
from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ConfigError, InvalidArgument
from .optimizers import ALGORITHMS, RunConfig
from .samplers import KINDS

SCHEMA_VERSION = 1

_pos_int = {"type": "integer", "minimum": 1}
_number_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "run"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["quadratic", "logistic", "nonconvex", "two_well"]},
                "n": _pos_int,
                "d": _pos_int,
                "kappa": {"type": "number", "minimum": 1},
                "l2": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(KINDS)},
                "transition": {"type": "array", "items": _number_list, "minItems": 1},
                "transition_file": {"type": "string"},
                "pattern": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "start_state": {"type": "integer", "minimum": 0},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["algorithm"],
            "properties": {
                "algorithm": {"enum": list(ALGORITHMS)},
                "iterations": {"type": "integer", "minimum": 0},
                "step_size_mode": {"enum": ["theory", "manual"]},
                "step_size": {"type": "number", "exclusiveMinimum": 0},
                "tau_mode": {"enum": ["theory", "manual"]},
                "tau": _pos_int,
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "burn_in_freeze": {"type": "boolean"},
                "record_trace": {"type": "boolean"},
            },
        },
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "conditioning": {"enum": ["good_event", "none"]},
                "unbiasedness_checkpoints": {"type": "integer", "minimum": 0},
                "debug": {"type": "boolean"},
                "concentration_replications": {"type": "integer", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
        },
        "replications": _pos_int,
        "base_seed": {"type": "integer", "minimum": 0},
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kappa": _number_list,
                "n": {"type": "array", "items": _pos_int, "minItems": 1},
                "tau": {"type": "array", "items": _pos_int, "minItems": 1},
                "algorithm": {"type": "array", "items": {"enum": list(ALGORITHMS)}, "minItems": 1},
                "sampler": {"type": "array", "items": {"enum": list(KINDS)}, "minItems": 1},
            },
        },
    },
}


@dataclass
class DiagnosticsConfig:
    enabled: bool = True
    conditioning: str = "good_event"
    unbiasedness_checkpoints: int = 20
    debug: bool = False
    concentration_replications: int = 0


@dataclass
class OutputConfig:
    dir: str = "out"
    prefix: str = "run"


@dataclass
class ExperimentConfig:
    problem: dict
    run: RunConfig
    sampler: Optional[dict] = None
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    replications: int = 1
    base_seed: int = 0
    sweep: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Plain dict that :func:`parse_config` accepts back unchanged."""
        d = asdict(self)
        # these two are set from the diagnostics block, not read from "run"
        d["run"].pop("unbiasedness_checkpoints")
        d["run"].pop("debug")
        d["run"] = {k: v for k, v in d["run"].items() if v is not None}
        if d["sampler"] is None:
            del d["sampler"]
        d["schema_version"] = SCHEMA_VERSION
        return d

    def with_overrides(self, **changes) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(out, k, v)
        return out


def _line_of(text: str, path) -> Optional[int]:
    """Best-effort line number of a JSON path inside the source text."""
    pos = 0
    found = None
    for token in path:
        if isinstance(token, str):
            m = re.compile(r'"%s"\s*:' % re.escape(token)).search(text, pos)
            if m is None:
                break
            pos = found = m.start()
    if found is None:
        return 1
    return text.count("\n", 0, found) + 1


def _first_error(instance, text):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(instance), key=lambda e: (len(e.path), list(map(str, e.path))))
    if not errors:
        return None
    err = errors[0]
    path = list(err.path)
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        path = path + extra[:1]
        msg = f"unknown key {extra[0]!r}" + (f" in '{'.'.join(map(str, err.path))}'" if err.path else "")
    else:
        where = ".".join(map(str, path)) or "<root>"
        msg = f"{where}: {err.message}"
    return ConfigError(msg, line=_line_of(text, path))


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    err = _first_error(raw, text)
    if err is not None:
        raise err
    try:
        run = RunConfig(**raw["run"])
        if run.algorithm != "gd" and "sampler" not in raw:
            raise InvalidArgument(f"algorithm {run.algorithm!r} needs a sampler block")
    except InvalidArgument as exc:
        raise ConfigError(str(exc), line=_line_of(text, ["run"])) from None
    diag = DiagnosticsConfig(**raw.get("diagnostics", {}))
    run.unbiasedness_checkpoints = diag.unbiasedness_checkpoints if diag.enabled else 0
    run.debug = diag.debug
    if not diag.enabled:
        run.record_trace = False
    return ExperimentConfig(
        problem=raw["problem"],
        run=run,
        sampler=raw.get("sampler"),
        diagnostics=diag,
        output=OutputConfig(**raw.get("output", {})),
        replications=raw.get("replications", 1),
        base_seed=raw.get("base_seed", 0),
        sweep=raw.get("sweep", {}),
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", line=None) from None
    return parse_config(text)
