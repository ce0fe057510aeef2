"""On-disk formats: ``.bscan`` radargram files and the text dataset manifest."""

from __future__ import annotations

import os
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .config import TARGET_SIZE
from .errors import ARGUMENT_ERROR, FORMAT_ERROR, IO_ERROR, NOT_FOUND, DatasetError
from .logging import get_logger
from .models import BScan, TargetVector

__all__ = [
    "BSCAN_MAGIC",
    "BSCAN_VERSION",
    "MANIFEST_NAME",
    "DatasetManifest",
    "ManifestEntry",
    "atomic_write_bytes",
    "atomic_write_text",
    "decode_bscan",
    "encode_bscan",
    "format_manifest",
    "parse_manifest",
    "read_bscan",
    "read_manifest",
    "write_bscan",
    "write_manifest",
]

logger = get_logger(__name__)

BSCAN_MAGIC = b"BSCN"
BSCAN_VERSION = 1
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.txt"
_HEADER = struct.Struct("<4sHHHdd")
_SLOTS = TARGET_SIZE // 2

_HEADER_PATTERN = re.compile(r"^bscan-dataset v(?P<version>\d+) n=(?P<n>\d+) split_seed=(?P<seed>\d+)$")


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write ``payload`` to a sibling temp file, then rename it over ``path``."""

    tmp = path.with_name(f".{path.name}.tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(payload)
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise DatasetError(IO_ERROR, f"unable to write {path}", details={"path": str(path)}) from exc


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_bscan(scan: BScan) -> bytes:
    rows, cols = scan.shape
    if rows > 0xFFFF or cols > 0xFFFF:
        raise DatasetError(ARGUMENT_ERROR, f"scan shape {scan.shape} does not fit the header")
    header = _HEADER.pack(BSCAN_MAGIC, BSCAN_VERSION, rows, cols, scan.dt_s, scan.trace_step_m)
    body = np.ascontiguousarray(scan.data, dtype="<f4").tobytes()
    return header + body


def decode_bscan(payload: bytes, *, source: str = "<bytes>") -> BScan:
    if len(payload) < _HEADER.size:
        raise DatasetError(FORMAT_ERROR, f"{source}: truncated header", details={"path": source})
    magic, version, rows, cols, dt, trace_step = _HEADER.unpack_from(payload)
    if magic != BSCAN_MAGIC:
        raise DatasetError(FORMAT_ERROR, f"{source}: bad magic {magic!r}", details={"path": source})
    if version != BSCAN_VERSION:
        raise DatasetError(FORMAT_ERROR, f"{source}: unsupported version {version}", details={"path": source})
    expected = _HEADER.size + rows * cols * 4
    if len(payload) != expected:
        raise DatasetError(
            FORMAT_ERROR,
            f"{source}: expected {expected} bytes, found {len(payload)}",
            details={"path": source},
        )
    data = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)
    return BScan(data=data, time_window_s=dt * rows, trace_step_m=trace_step, meta={"source": source})


def write_bscan(path: Path, scan: BScan) -> None:
    atomic_write_bytes(path, encode_bscan(scan))


def read_bscan(path: Path) -> BScan:
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(IO_ERROR, f"unable to read {path}", details={"path": str(path)}) from exc
    return decode_bscan(payload, source=str(path))


@dataclass(frozen=True, slots=True)
class ManifestEntry:
    sample_id: int
    file: str
    target: TargetVector
    layers: int
    seed: int

    def format(self) -> str:
        thick = ",".join(repr(value) for value in self.target.thicknesses)
        eps = ",".join(repr(value) for value in self.target.permittivities)
        return f"id={self.sample_id} file={self.file} layers={self.layers} seed={self.seed} t={thick} e={eps}"


@dataclass(frozen=True, slots=True)
class DatasetManifest:
    """Index of a dataset directory; ``root`` resolves the relative scan paths."""

    entries: tuple[ManifestEntry, ...]
    split_seed: int = 0
    version: int = MANIFEST_VERSION
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [entry.sample_id for entry in self.entries]
        if len(set(ids)) != len(ids):
            raise DatasetError(FORMAT_ERROR, "manifest sample ids must be unique")

    @property
    def n_samples(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def ids(self) -> list[int]:
        return [entry.sample_id for entry in self.entries]

    def entry(self, sample_id: int) -> ManifestEntry:
        for candidate in self.entries:
            if candidate.sample_id == sample_id:
                return candidate
        raise DatasetError(NOT_FOUND, f"sample {sample_id} not in manifest", details={"id": sample_id})

    def path_of(self, entry: ManifestEntry) -> Path:
        return self.root / entry.file

    def subset(self, sample_ids: Iterable[int]) -> "DatasetManifest":
        by_id = {entry.sample_id: entry for entry in self.entries}
        chosen = []
        for sample_id in sample_ids:
            if sample_id not in by_id:
                raise DatasetError(NOT_FOUND, f"sample {sample_id} not in manifest", details={"id": sample_id})
            chosen.append(by_id[sample_id])
        return replace(self, entries=tuple(chosen))


def format_manifest(manifest: DatasetManifest) -> str:
    lines = [f"bscan-dataset v{manifest.version} n={manifest.n_samples} split_seed={manifest.split_seed}"]
    lines.extend(entry.format() for entry in manifest.entries)
    return "\n".join(lines) + "\n"


def _parse_floats(token: str, *, source: str, lineno: int) -> list[float]:
    try:
        values = [float(part) for part in token.split(",")]
    except ValueError as exc:
        raise DatasetError(FORMAT_ERROR, f"{source}:{lineno}: malformed number list {token!r}") from exc
    if len(values) != _SLOTS:
        raise DatasetError(FORMAT_ERROR, f"{source}:{lineno}: expected {_SLOTS} values, got {len(values)}")
    return values


def _parse_entry(line: str, *, source: str, lineno: int) -> ManifestEntry:
    fields: dict[str, str] = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise DatasetError(FORMAT_ERROR, f"{source}:{lineno}: expected key=value, got {token!r}")
        fields[key] = value
    missing = [key for key in ("id", "file", "layers", "seed", "t", "e") if key not in fields]
    if missing:
        raise DatasetError(FORMAT_ERROR, f"{source}:{lineno}: missing fields {missing}")
    try:
        sample_id = int(fields["id"])
        layers = int(fields["layers"])
        seed = int(fields["seed"])
    except ValueError as exc:
        raise DatasetError(FORMAT_ERROR, f"{source}:{lineno}: malformed integer field") from exc
    thick = _parse_floats(fields["t"], source=source, lineno=lineno)
    eps = _parse_floats(fields["e"], source=source, lineno=lineno)
    return ManifestEntry(sample_id=sample_id, file=fields["file"], target=TargetVector(tuple(thick + eps)), layers=layers, seed=seed)


def parse_manifest(text: str, *, root: Path = Path("."), source: str = MANIFEST_NAME) -> DatasetManifest:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DatasetError(FORMAT_ERROR, f"{source}: empty manifest")
    match = _HEADER_PATTERN.match(lines[0].strip())
    if match is None:
        raise DatasetError(FORMAT_ERROR, f"{source}:1: malformed header {lines[0]!r}")
    version = int(match["version"])
    if version != MANIFEST_VERSION:
        raise DatasetError(FORMAT_ERROR, f"{source}: unsupported manifest version {version}")
    entries = tuple(_parse_entry(line, source=source, lineno=index) for index, line in enumerate(lines[1:], start=2))
    declared = int(match["n"])
    if declared != len(entries):
        raise DatasetError(FORMAT_ERROR, f"{source}: header declares {declared} samples, found {len(entries)}")
    return DatasetManifest(entries=entries, split_seed=int(match["seed"]), version=version, root=root)


def write_manifest(directory: Path, manifest: DatasetManifest, *, name: str = MANIFEST_NAME) -> Path:
    path = Path(directory) / name
    atomic_write_text(path, format_manifest(manifest))
    return path


def read_manifest(path: Path, *, check_files: bool = True) -> DatasetManifest:
    """Load a manifest file, or ``manifest.txt`` inside a dataset directory."""

    target = Path(path)
    if target.is_dir():
        target = target / MANIFEST_NAME
    try:
        text = target.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(IO_ERROR, f"unable to read manifest {target}", details={"path": str(target)}) from exc
    manifest = parse_manifest(text, root=target.parent, source=str(target))
    if check_files:
        missing = [manifest.path_of(entry) for entry in manifest if not manifest.path_of(entry).is_file()]
        if missing:
            raise DatasetError(
                IO_ERROR,
                f"manifest references missing file {missing[0]}",
                details={"path": str(missing[0]), "missing": len(missing)},
            )
    logger.debug("storage.manifest.loaded", extra={"context": {"path": str(target), "n": manifest.n_samples}})
    return manifest
