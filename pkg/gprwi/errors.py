"""Centralized error codes and helper utilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

__all__ = [
    "STABILITY_VIOLATION",
    "GEOMETRY_ERROR",
    "ARGUMENT_ERROR",
    "CONSTRAINT_ERROR",
    "IO_ERROR",
    "FORMAT_ERROR",
    "NOT_FOUND",
    "DEGENERATE_TRACE",
    "DEGENERATE_SCAN",
    "SHAPE_ERROR",
    "DEGENERATE_BATCH",
    "GRAPH_ERROR",
    "NON_FINITE",
    "DATA_ERROR",
    "NON_FINITE_LOSS",
    "CHECKPOINT_ERROR",
    "EMPTY_INPUT",
    "EMPTY_CATALOG",
    "SCENE_PARSE_ERROR",
    "INVALID_SCENE",
    "CONFIG_ERROR",
    "INTERNAL_ERROR",
    "GprwiError",
    "SimulationError",
    "SceneError",
    "DatasetError",
    "SignalError",
    "NetworkError",
    "TrainingError",
    "EvaluationError",
    "error_payload",
    "exit_status",
]

STABILITY_VIOLATION = "STABILITY_VIOLATION"
GEOMETRY_ERROR = "GEOMETRY_ERROR"
ARGUMENT_ERROR = "ARGUMENT_ERROR"
CONSTRAINT_ERROR = "CONSTRAINT_ERROR"
IO_ERROR = "IO_ERROR"
FORMAT_ERROR = "FORMAT_ERROR"
NOT_FOUND = "NOT_FOUND"
DEGENERATE_TRACE = "DEGENERATE_TRACE"
DEGENERATE_SCAN = "DEGENERATE_SCAN"
SHAPE_ERROR = "SHAPE_ERROR"
DEGENERATE_BATCH = "DEGENERATE_BATCH"
GRAPH_ERROR = "GRAPH_ERROR"
NON_FINITE = "NON_FINITE"
DATA_ERROR = "DATA_ERROR"
NON_FINITE_LOSS = "NON_FINITE_LOSS"
CHECKPOINT_ERROR = "CHECKPOINT_ERROR"
EMPTY_INPUT = "EMPTY_INPUT"
EMPTY_CATALOG = "EMPTY_CATALOG"
SCENE_PARSE_ERROR = "SCENE_PARSE_ERROR"
INVALID_SCENE = "INVALID_SCENE"
CONFIG_ERROR = "CONFIG_ERROR"
INTERNAL_ERROR = "INTERNAL_ERROR"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_PARSE = 2
EXIT_SIMULATION = 3
EXIT_IO = 4
EXIT_TRAINING = 5

_EXIT_BY_CODE: dict[str, int] = {
    SCENE_PARSE_ERROR: EXIT_PARSE,
    INVALID_SCENE: EXIT_PARSE,
    CONFIG_ERROR: EXIT_PARSE,
    ARGUMENT_ERROR: EXIT_PARSE,
    STABILITY_VIOLATION: EXIT_SIMULATION,
    GEOMETRY_ERROR: EXIT_SIMULATION,
    CONSTRAINT_ERROR: EXIT_SIMULATION,
    IO_ERROR: EXIT_IO,
    FORMAT_ERROR: EXIT_IO,
    NOT_FOUND: EXIT_IO,
    CHECKPOINT_ERROR: EXIT_IO,
    SHAPE_ERROR: EXIT_TRAINING,
    DEGENERATE_BATCH: EXIT_TRAINING,
    GRAPH_ERROR: EXIT_TRAINING,
    NON_FINITE: EXIT_TRAINING,
    DATA_ERROR: EXIT_TRAINING,
    NON_FINITE_LOSS: EXIT_TRAINING,
    DEGENERATE_TRACE: EXIT_TRAINING,
    DEGENERATE_SCAN: EXIT_TRAINING,
    EMPTY_INPUT: EXIT_TRAINING,
    EMPTY_CATALOG: EXIT_TRAINING,
}


@dataclass(slots=True)
class GprwiError(Exception):
    """Domain-specific exception carrying an error code and message."""

    code: str
    message: str
    details: Mapping[str, Any] | None = None

    def __str__(self) -> str:  # pragma: no cover - delegation to message
        return self.message

    def to_dict(self) -> dict[str, Any]:
        return error_payload(self.code, self.message, details=self.details)


class SimulationError(GprwiError):
    """Raised by the FDTD solver (stability, geometry)."""


class SceneError(GprwiError):
    """Raised while parsing, sampling, or validating wall configurations."""


class DatasetError(GprwiError):
    """Raised by dataset persistence and splitting."""


class SignalError(GprwiError):
    """Raised by radargram preprocessing."""


class NetworkError(GprwiError):
    """Raised by tensor kernels, layers, and the optimizer."""


class TrainingError(GprwiError):
    """Raised by training, fine-tuning, and checkpoint handling."""


class EvaluationError(GprwiError):
    """Raised by metric aggregation and material classification."""


def error_payload(code: str, message: str, *, details: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Build a structured error payload used in the run summary."""

    payload: dict[str, Any] = {
        "code": code,
        "message": message,
    }
    if details:
        payload["details"] = dict(details)
    return payload


def exit_status(exc: BaseException) -> int:
    """Map an exception to the CLI exit status."""

    if isinstance(exc, GprwiError):
        return _EXIT_BY_CODE.get(exc.code, EXIT_INTERNAL)
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_INTERNAL
