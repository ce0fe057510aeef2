from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from gprwi.checkpoint import (
    CHECKPOINT_MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from gprwi.errors import CHECKPOINT_ERROR, IO_ERROR, TrainingError
from gprwi.nn import BatchNorm2d, Conv2D, Flatten, Linear, Sequential
from gprwi.optim import AdamState, adam_step


def _network(seed: int, out_features: int = 12) -> Sequential:
    rng = np.random.default_rng(seed)
    return Sequential(
        [
            ("conv1", Conv2D(1, 2, (2, 2), rng)),
            ("bn1", BatchNorm2d(2)),
            ("flatten", Flatten()),
            ("linear1", Linear(2 * 3 * 3, out_features, rng)),
        ]
    )


def _trained_state(network: Sequential) -> AdamState:
    params = [tensor for _, tensor in network.named_parameters()]
    state = AdamState(lr=0.01)
    for _ in range(3):
        adam_step([t.value for t in params], [np.ones_like(t.value) for t in params], state)
    network.forward(np.random.default_rng(0).normal(size=(4, 1, 4, 4)), "train")
    return state


def test_save_and_load_restore_every_value(tmp_path: Path) -> None:
    source = _network(1)
    state = _trained_state(source)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, source, state)

    target = _network(2)
    restored = load_checkpoint(path, target)

    for (name, a), (_, b) in zip(source.state(), target.state()):
        assert np.array_equal(a.value, b.value), name
    assert restored.t == 3
    assert restored.lr == 0.01
    for m_src, m_dst in zip(state.m, restored.m):
        assert np.array_equal(m_src, m_dst)
    for v_src, v_dst in zip(state.v, restored.v):
        assert np.array_equal(v_src, v_dst)


def test_checkpoint_without_moments(tmp_path: Path) -> None:
    path = tmp_path / "fresh.ckpt"
    save_checkpoint(path, _network(0))

    restored = load_checkpoint(path, _network(5))

    assert restored.t == 0
    assert not restored.initialized


def test_header_layout() -> None:
    payload = encode_checkpoint([("w", np.zeros((2, 3)))])

    assert payload.startswith(CHECKPOINT_MAGIC)
    checkpoint = decode_checkpoint(payload)
    assert checkpoint.manifest() == [("w", (2, 3))]


@pytest.mark.parametrize(
    "mutate",
    [
        lambda payload: b"BADMAG" + payload[6:],
        lambda payload: payload[:-3],
        lambda payload: payload[:20],
        lambda payload: payload + b"\x00",
    ],
)
def test_corrupt_checkpoint_is_rejected(mutate) -> None:
    network = _network(0)
    payload = encode_checkpoint([(name, t.value) for name, t in network.state()], _trained_state(network))

    with pytest.raises(TrainingError) as excinfo:
        decode_checkpoint(mutate(payload))

    assert excinfo.value.code == CHECKPOINT_ERROR


def test_non_finite_values_are_rejected() -> None:
    payload = encode_checkpoint([("w", np.array([1.0, np.nan]))])

    with pytest.raises(TrainingError) as excinfo:
        decode_checkpoint(payload)

    assert excinfo.value.code == CHECKPOINT_ERROR


def test_topology_mismatch_leaves_network_untouched(tmp_path: Path) -> None:
    path = tmp_path / "other.ckpt"
    save_checkpoint(path, _network(0, out_features=6))
    target = _network(3)
    before = [tensor.value.copy() for _, tensor in target.state()]

    with pytest.raises(TrainingError) as excinfo:
        load_checkpoint(path, target)

    assert excinfo.value.code == CHECKPOINT_ERROR
    for value, (_, tensor) in zip(before, target.state()):
        assert np.array_equal(value, tensor.value)


def test_missing_checkpoint_file(tmp_path: Path) -> None:
    with pytest.raises(TrainingError) as excinfo:
        read_checkpoint(tmp_path / "absent.ckpt")

    assert excinfo.value.code == IO_ERROR
