from __future__ import annotations

import pytest

from gprwi import errors, metrics


@pytest.mark.parametrize(
    ("exc", "status"),
    [
        (errors.SceneError(errors.SCENE_PARSE_ERROR, "bad line"), 2),
        (errors.GprwiError(errors.ARGUMENT_ERROR, "missing flag"), 2),
        (errors.SimulationError(errors.STABILITY_VIOLATION, "blew up"), 3),
        (errors.SimulationError(errors.GEOMETRY_ERROR, "outside"), 3),
        (errors.DatasetError(errors.IO_ERROR, "disk"), 4),
        (errors.TrainingError(errors.CHECKPOINT_ERROR, "magic"), 4),
        (errors.TrainingError(errors.NON_FINITE_LOSS, "nan"), 5),
        (errors.NetworkError(errors.SHAPE_ERROR, "shape"), 5),
        (errors.EvaluationError(errors.EMPTY_INPUT, "empty"), 5),
        (errors.GprwiError(errors.INTERNAL_ERROR, "?"), 1),
        (FileNotFoundError("gone"), 4),
        (RuntimeError("boom"), 1),
    ],
)
def test_exit_status_mapping(exc: BaseException, status: int) -> None:
    assert errors.exit_status(exc) == status


def test_error_payload_includes_details_only_when_present() -> None:
    bare = errors.SignalError(errors.DEGENERATE_TRACE, "trace 3 is all zeros")
    detailed = errors.SignalError(errors.DEGENERATE_TRACE, "trace 3 is all zeros", {"traces": [3]})

    assert bare.to_dict() == {"code": "DEGENERATE_TRACE", "message": "trace 3 is all zeros"}
    assert detailed.to_dict()["details"] == {"traces": [3]}
    assert str(detailed) == "trace 3 is all zeros"


def test_registry_counts_operations_and_errors(registry: metrics.MetricsRegistry) -> None:
    metrics.record_operation("ascan", count=40)
    metrics.record_operation("bscan")
    metrics.record_operation("sample", count=0)
    metrics.record_error("io_error")

    snapshot = registry.snapshot()

    assert snapshot.operations["ascan"] == 40
    assert snapshot.operations["bscan"] == 1
    assert snapshot.operations["sample"] == 0
    assert snapshot.operations["epoch"] == 0
    assert snapshot.errors == {"IO_ERROR": 1}


def test_record_helpers_without_registry() -> None:
    metrics.install_registry(None)
    metrics.record_operation("ascan")
    metrics.record_error("NOT_FOUND")


def test_summary_payload_shape(registry: metrics.MetricsRegistry) -> None:
    metrics.record_operation("prediction", count=2)

    payload = metrics.summary_payload("predict", 0, registry.snapshot(), outputs=[])

    assert payload["command"] == "predict"
    assert payload["status"] == 0
    assert payload["outputs"] == []
    assert payload["metrics"]["operations"]["prediction"] == 2
    assert payload["metrics"]["elapsed_seconds"] >= 0
