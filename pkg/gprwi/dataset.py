"""Synthetic dataset generation, persistence, and deterministic splitting."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .config import DEFAULT_SEED, SamplerSettings, SimulationSettings
from .errors import ARGUMENT_ERROR, DATA_ERROR, IO_ERROR, DatasetError, GprwiError
from .fdtd import run_bscan
from .logging import get_logger
from .metrics import record_operation
from .models import BScan, TargetVector, WallConfig
from .preprocess import normalize
from .scene import sample_wall, to_target
from .storage import (
    DatasetManifest,
    ManifestEntry,
    read_bscan,
    read_manifest,
    write_bscan,
    write_manifest,
)

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "PlannedSample",
    "derive_sample_seed",
    "generate_dataset",
    "load_arrays",
    "load_sample",
    "plan_dataset",
    "read_manifest",
    "split_dataset",
    "write_labeled_segments",
]

logger = get_logger(__name__)

SCAN_DIR = "scans"


def derive_sample_seed(master_seed: int, index: int) -> int:
    """Per-sample seed that depends only on ``(master_seed, index)``."""

    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, slots=True)
class PlannedSample:
    sample_id: int
    seed: int
    config: WallConfig

    @property
    def file(self) -> str:
        return f"{SCAN_DIR}/{self.sample_id:06d}.bscan"

    def entry(self) -> ManifestEntry:
        return ManifestEntry(
            sample_id=self.sample_id,
            file=self.file,
            target=to_target(self.config),
            layers=len(self.config.layers),
            seed=self.seed,
        )


def plan_dataset(
    n: int,
    master_seed: int = DEFAULT_SEED,
    *,
    sampler: SamplerSettings | None = None,
    simulation: SimulationSettings | None = None,
) -> Iterator[PlannedSample]:
    """Yield the sampled wall of every sample without simulating it."""

    if n < 1:
        raise DatasetError(ARGUMENT_ERROR, f"dataset size must be >= 1, got {n}")
    width = (simulation or SimulationSettings()).width_m
    for index in range(n):
        seed = derive_sample_seed(master_seed, index)
        config = sample_wall(np.random.default_rng(seed), sampler, seed=seed, width_m=width)
        yield PlannedSample(sample_id=index, seed=seed, config=config)


def _simulate(planned: PlannedSample, settings: SimulationSettings, out_dir: Path) -> ManifestEntry:
    try:
        scan = run_bscan(planned.config, settings)
    except GprwiError as exc:
        details = {**(exc.details or {}), "sample_id": planned.sample_id, "seed": planned.seed}
        raise type(exc)(exc.code, f"sample {planned.sample_id}: {exc.message}", details) from exc
    write_bscan(out_dir / planned.file, scan)
    return planned.entry()


def generate_dataset(
    n: int,
    master_seed: int,
    out_dir: Path,
    *,
    settings: SimulationSettings | None = None,
    sampler: SamplerSettings | None = None,
    workers: int = 1,
    on_sample: Callable[[ManifestEntry], None] | None = None,
) -> DatasetManifest:
    """Simulate ``n`` samples into ``out_dir`` and write the manifest.

    Workers write their own scan files; the manifest is assembled here in id
    order once every sample has finished. On failure, files written by this
    call are removed before the error propagates.
    """

    sim = settings or SimulationSettings()
    out = Path(out_dir)
    try:
        (out / SCAN_DIR).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(IO_ERROR, f"cannot create dataset directory {out}", details={"path": str(out)}) from exc

    planned = list(plan_dataset(n, master_seed, sampler=sampler, simulation=sim))
    existing = {p.file for p in planned if (out / p.file).exists()}
    entries: list[ManifestEntry] = []
    logger.info("dataset.generate.start", extra={"context": {"n": n, "seed": master_seed, "workers": workers}})
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_simulate, planned, [sim] * n, [out] * n)
                for entry in results:
                    entries.append(entry)
                    record_operation("sample")
                    if on_sample is not None:
                        on_sample(entry)
        else:
            for sample in planned:
                entry = _simulate(sample, sim, out)
                entries.append(entry)
                record_operation("sample")
                if on_sample is not None:
                    on_sample(entry)
        manifest = DatasetManifest(entries=tuple(entries), split_seed=master_seed, root=out)
        write_manifest(out, manifest)
    except BaseException:
        for sample in planned:
            if sample.file not in existing:
                (out / sample.file).unlink(missing_ok=True)
        raise
    logger.info("dataset.generate.done", extra={"context": {"n": n, "path": str(out)}})
    return manifest


def split_dataset(m: DatasetManifest, ratio: float, seed: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Partition ``m`` into train and test manifests; ``round(ratio * n)`` samples train."""

    if not 0.0 < ratio < 1.0:
        raise DatasetError(ARGUMENT_ERROR, f"split ratio must lie in (0, 1), got {ratio}")
    n = m.n_samples
    n_train = int(math.floor(ratio * n + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    ids = m.ids()
    train_ids = sorted(ids[i] for i in order[:n_train])
    test_ids = sorted(ids[i] for i in order[n_train:])
    return (
        replace(m.subset(train_ids), split_seed=seed),
        replace(m.subset(test_ids), split_seed=seed),
    )


def load_sample(m: DatasetManifest, sample_id: int) -> tuple[BScan, TargetVector]:
    entry = m.entry(sample_id)
    path = m.path_of(entry)
    if not path.is_file():
        raise DatasetError(IO_ERROR, f"scan file {path} is missing", details={"path": str(path), "id": sample_id})
    return read_bscan(path), entry.target


def load_arrays(
    m: DatasetManifest,
    *,
    shape: tuple[int, int] = (255, 40),
    dtype: str | np.dtype = np.float32,
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Stack normalised scans as ``(N, 1, rows, cols)`` next to ``(N, 12)`` targets.

    Samples with the wrong shape, non-finite values, or an all-zero scan are
    reported by id.
    """

    if m.n_samples == 0:
        raise DatasetError(DATA_ERROR, "dataset is empty")
    scans = np.empty((m.n_samples, 1, *shape), dtype=dtype)
    targets = np.empty((m.n_samples, 12), dtype=dtype)
    ids: list[int] = []
    for row, entry in enumerate(m):
        scan, target = load_sample(m, entry.sample_id)
        if scan.shape != shape or not scan.is_finite():
            raise DatasetError(
                DATA_ERROR,
                f"sample {entry.sample_id} has shape {scan.shape} or non-finite values",
                details={"id": entry.sample_id, "shape": list(scan.shape)},
            )
        try:
            scans[row, 0] = normalize(scan).data
        except GprwiError as exc:
            raise DatasetError(DATA_ERROR, f"sample {entry.sample_id}: {exc.message}", details={"id": entry.sample_id}) from exc
        targets[row] = target.as_array()
        ids.append(entry.sample_id)
    return scans, targets, ids


def write_labeled_segments(
    segments: list[BScan],
    config: WallConfig,
    out_dir: Path,
    *,
    split_seed: int = DEFAULT_SEED,
) -> DatasetManifest:
    """Persist preprocessed segments of one known wall as a dataset directory."""

    out = Path(out_dir)
    target = to_target(config)
    entries = []
    for index, scan in enumerate(segments):
        entry = ManifestEntry(
            sample_id=index,
            file=f"{SCAN_DIR}/{index:06d}.bscan",
            target=target,
            layers=len(config.layers),
            seed=config.seed,
        )
        write_bscan(out / entry.file, scan)
        entries.append(entry)
    manifest = DatasetManifest(entries=tuple(entries), split_seed=split_seed, root=out)
    write_manifest(out, manifest)
    return manifest
