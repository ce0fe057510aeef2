"""Published JSON schemas for the run summary and prediction output."""

from __future__ import annotations

from typing import Any, Mapping

import jsonschema

from .errors import FORMAT_ERROR, GprwiError

__all__ = ["PREDICTION_SCHEMA", "SCHEMAS", "SUMMARY_SCHEMA", "validate_payload"]

_DRAFT = "https://json-schema.org/draft/2020-12/schema"

SUMMARY_SCHEMA: dict[str, Any] = {
    "$schema": _DRAFT,
    "title": "gprwi run summary",
    "type": "object",
    "required": ["command", "status"],
    "properties": {
        "command": {
            "enum": ["simulate", "gen-dataset", "preprocess", "train", "finetune", "predict", "evaluate", "sweep"],
        },
        "status": {"type": "integer", "minimum": 0, "maximum": 5},
        "outputs": {"type": "array", "items": {"type": "string"}},
        "seed": {"type": "integer", "minimum": 0},
        "error": {
            "type": "object",
            "required": ["code", "message"],
            "properties": {
                "code": {"type": "string"},
                "message": {"type": "string"},
                "details": {"type": "object"},
            },
        },
        "metrics": {
            "type": "object",
            "required": ["operations", "errors", "elapsed_seconds"],
            "properties": {
                "operations": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
                "errors": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 0}},
                "elapsed_seconds": {"type": "number", "minimum": 0},
            },
        },
    },
}

_LAYER = {
    "type": "object",
    "required": ["thickness_m", "eps_r", "material"],
    "properties": {
        "thickness_m": {"type": "number", "exclusiveMinimum": 0},
        "eps_r": {"type": "number", "minimum": 0},
        "material": {"type": "string"},
    },
    "additionalProperties": False,
}

PREDICTION_SCHEMA: dict[str, Any] = {
    "$schema": _DRAFT,
    "title": "gprwi prediction",
    "type": "object",
    "required": ["scan", "raw", "layers"],
    "properties": {
        "scan": {"type": "string"},
        "raw": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 12, "maxItems": 12},
        "layers": {"type": "array", "items": _LAYER, "maxItems": 6},
        "total_thickness_m": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}

SCHEMAS: dict[str, dict[str, Any]] = {"summary": SUMMARY_SCHEMA, "prediction": PREDICTION_SCHEMA}


def validate_payload(name: str, payload: Mapping[str, Any]) -> None:
    """Check ``payload`` against the named schema."""

    try:
        schema = SCHEMAS[name]
    except KeyError as exc:
        raise GprwiError(FORMAT_ERROR, f"unknown schema {name!r}") from exc
    validator_cls = jsonschema.validators.validator_for(schema)
    validator_cls.check_schema(schema)
    errors = sorted(validator_cls(schema).iter_errors(dict(payload)), key=lambda err: list(err.absolute_path))
    if errors:
        first = errors[0]
        location = "/".join(str(part) for part in first.absolute_path) or "<root>"
        raise GprwiError(
            FORMAT_ERROR,
            f"{name} payload invalid at {location}: {first.message}",
            {"schema": name, "errors": len(errors)},
        )
