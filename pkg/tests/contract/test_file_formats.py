from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from gprwi.checkpoint import CHECKPOINT_MAGIC, encode_checkpoint
from gprwi.models import BScan, TargetVector
from gprwi.storage import (
    BSCAN_MAGIC,
    DatasetManifest,
    ManifestEntry,
    read_manifest,
    write_bscan,
    write_manifest,
)


def test_bscan_byte_layout(tmp_path: Path) -> None:
    data = np.arange(6, dtype=np.float32).reshape(3, 2)
    path = tmp_path / "scan.bscan"

    write_bscan(path, BScan(data=data, time_window_s=3e-9, trace_step_m=0.02))

    payload = path.read_bytes()
    magic, version, rows, cols, dt, step = struct.unpack_from("<4sHHHdd", payload)
    assert (magic, version, rows, cols) == (BSCAN_MAGIC, 1, 3, 2)
    assert dt == pytest.approx(1e-9)
    assert step == 0.02
    body = np.frombuffer(payload, dtype="<f4", offset=struct.calcsize("<4sHHHdd"))
    assert body.tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]


def test_manifest_is_line_oriented_text(tmp_path: Path) -> None:
    target = TargetVector((0.1, 0.05) + (0.0,) * 4 + (4.0, 2.5) + (0.0,) * 4)
    manifest = DatasetManifest(
        entries=(ManifestEntry(sample_id=7, file="scans/000007.bscan", target=target, layers=2, seed=42),),
        split_seed=3,
    )
    (tmp_path / "scans").mkdir()
    write_bscan(tmp_path / "scans" / "000007.bscan", BScan(data=np.ones((4, 2)), time_window_s=4e-9, trace_step_m=0.01))

    write_manifest(tmp_path, manifest)

    lines = (tmp_path / "manifest.txt").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "bscan-dataset v1 n=1 split_seed=3"
    assert lines[1] == (
        "id=7 file=scans/000007.bscan layers=2 seed=42 "
        "t=0.1,0.05,0.0,0.0,0.0,0.0 e=4.0,2.5,0.0,0.0,0.0,0.0"
    )
    assert read_manifest(tmp_path).entries[0].target == target


def test_checkpoint_preamble() -> None:
    payload = encode_checkpoint([("fc.weight", np.zeros((2, 3))), ("fc.bias", np.zeros(2))])

    magic, version, count = struct.unpack_from("<6sHI", payload)
    assert (magic, version, count) == (CHECKPOINT_MAGIC, 1, 2)
    assert payload[12:14] == struct.pack("<H", len("fc.weight"))
    assert payload[14:23] == b"fc.weight"
