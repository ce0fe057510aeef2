"""Binary checkpoint codec for network state and optimiser moments.

Layout (little-endian)::

    b"NNCKPT" u16 version u32 count
    count x (u16 name_len, name utf-8, u8 ndim, ndim x u32 dim)
    all values as f64, entries in header order
    u64 t, f64 lr, f64 beta1, f64 beta2, f64 eps, u8 has_moments
    [m as f64 for every parameter value, then v likewise]
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CHECKPOINT_ERROR, IO_ERROR, TrainingError
from .logging import get_logger
from .nn import Sequential
from .optim import AdamState
from .storage import atomic_write_bytes

__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "decode_checkpoint",
    "encode_checkpoint",
    "load_checkpoint",
    "read_checkpoint",
    "restore_into",
    "save_checkpoint",
]

logger = get_logger(__name__)

CHECKPOINT_MAGIC = b"NNCKPT"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<6sHI")
_ADAM = struct.Struct("<QddddB")


@dataclass(frozen=True, slots=True)
class Checkpoint:
    """Decoded checkpoint: named float64 arrays in stored order plus optimiser state."""

    entries: tuple[tuple[str, np.ndarray], ...]
    adam: AdamState

    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, tuple(array.shape)) for name, array in self.entries]

    def get(self, name: str) -> np.ndarray:
        for key, array in self.entries:
            if key == name:
                return array
        raise TrainingError(CHECKPOINT_ERROR, f"checkpoint has no entry {name!r}")


def encode_checkpoint(entries: Sequence[tuple[str, np.ndarray]], adam: AdamState | None = None) -> bytes:
    state = adam or AdamState()
    chunks = [_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(entries))]
    for name, array in entries:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape))
    for _, array in entries:
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    chunks.append(_ADAM.pack(state.t, state.lr, state.beta1, state.beta2, state.eps, 1 if state.initialized else 0))
    if state.initialized:
        chunks.extend(np.ascontiguousarray(m, dtype="<f8").tobytes() for m in state.m)
        chunks.extend(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in state.v)
    return b"".join(chunks)


class _Reader:
    __slots__ = ("_payload", "_offset", "_source")

    def __init__(self, payload: bytes, source: str) -> None:
        self._payload = payload
        self._offset = 0
        self._source = source

    def take(self, size: int) -> bytes:
        end = self._offset + size
        if size < 0 or end > len(self._payload):
            raise TrainingError(CHECKPOINT_ERROR, f"{self._source}: truncated checkpoint", details={"path": self._source})
        chunk = self._payload[self._offset : end]
        self._offset = end
        return chunk

    def unpack(self, fmt: struct.Struct | str) -> tuple:
        packer = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return packer.unpack(self.take(packer.size))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    @property
    def remaining(self) -> int:
        return len(self._payload) - self._offset

    @property
    def exhausted(self) -> bool:
        return self.remaining == 0


def decode_checkpoint(payload: bytes, *, source: str = "<bytes>") -> Checkpoint:
    """Decode a checkpoint; the optimiser moments take whatever follows their header, split evenly."""

    reader = _Reader(payload, source)
    magic, version, count = reader.unpack(_PREAMBLE)
    if magic != CHECKPOINT_MAGIC:
        raise TrainingError(CHECKPOINT_ERROR, f"{source}: bad magic {magic!r}", details={"path": source})
    if version != CHECKPOINT_VERSION:
        raise TrainingError(CHECKPOINT_ERROR, f"{source}: unsupported version {version}", details={"path": source})

    shapes: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TrainingError(CHECKPOINT_ERROR, f"{source}: malformed entry name") from exc
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I") if ndim else ()
        shapes.append((name, tuple(int(d) for d in dims)))

    entries = tuple((name, reader.floats(math.prod(shape)).reshape(shape)) for name, shape in shapes)
    t, lr, beta1, beta2, eps, has_moments = reader.unpack(_ADAM)
    adam = AdamState(t=int(t), lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    if has_moments:
        if reader.remaining % 16:
            raise TrainingError(CHECKPOINT_ERROR, f"{source}: optimizer moments are truncated", details={"path": source})
        total = reader.remaining // 16
        adam.m = [reader.floats(total)]
        adam.v = [reader.floats(total)]
    if not reader.exhausted:
        raise TrainingError(CHECKPOINT_ERROR, f"{source}: trailing bytes after checkpoint", details={"path": source})
    if any(not np.all(np.isfinite(array)) for _, array in entries):
        raise TrainingError(CHECKPOINT_ERROR, f"{source}: non-finite values in checkpoint", details={"path": source})
    return Checkpoint(entries=entries, adam=adam)


def save_checkpoint(path: Path, network: Sequential, adam: AdamState | None = None) -> None:
    entries = [(name, tensor.value) for name, tensor in network.state()]
    atomic_write_bytes(Path(path), encode_checkpoint(entries, adam))
    logger.info("checkpoint.saved", extra={"context": {"path": str(path), "entries": len(entries)}})


def read_checkpoint(path: Path) -> Checkpoint:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise TrainingError(IO_ERROR, f"unable to read checkpoint {path}", details={"path": str(path)}) from exc
    return decode_checkpoint(payload, source=str(path))


def restore_into(network: Sequential, checkpoint: Checkpoint) -> AdamState:
    """Copy checkpoint values into ``network``; nothing is written unless every entry matches."""

    expected = [(name, tensor.shape) for name, tensor in network.state()]
    if expected != checkpoint.manifest():
        raise TrainingError(
            CHECKPOINT_ERROR,
            "checkpoint topology does not match the network",
            details={"expected": len(expected), "found": len(checkpoint.entries)},
        )
    params = [tensor for _, tensor in network.named_parameters()]
    adam = checkpoint.adam
    split_moments: tuple[list[np.ndarray], list[np.ndarray]] = ([], [])
    if adam.initialized:
        total = sum(t.size for t in params)
        flat_m, flat_v = np.concatenate(adam.m), np.concatenate(adam.v)
        if flat_m.size != total or flat_v.size != total:
            raise TrainingError(CHECKPOINT_ERROR, "optimizer moments do not match the parameter count")
        offsets = np.cumsum([0] + [t.size for t in params])
        for tensor, lo, hi in zip(params, offsets[:-1], offsets[1:]):
            split_moments[0].append(flat_m[lo:hi].reshape(tensor.shape).copy())
            split_moments[1].append(flat_v[lo:hi].reshape(tensor.shape).copy())

    for (_, tensor), (_, array) in zip(network.state(), checkpoint.entries):
        tensor.value[...] = array.astype(tensor.value.dtype)
        tensor.grad = None
    return AdamState(
        m=split_moments[0],
        v=split_moments[1],
        t=adam.t,
        lr=adam.lr,
        beta1=adam.beta1,
        beta2=adam.beta2,
        eps=adam.eps,
    )


def load_checkpoint(path: Path, network: Sequential) -> AdamState:
    return restore_into(network, read_checkpoint(path))
