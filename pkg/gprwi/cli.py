"""Command-line entry point: ``gprwi <subcommand>``.

Every run ends with one JSON summary line on stdout. Logs and progress bars
go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import shutil
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from .config import PATH_KEYS, ConfigError, RunConfig, load_run_config
from .dataset import generate_dataset, load_arrays, split_dataset, write_labeled_segments
from .errors import (
    ARGUMENT_ERROR,
    CONFIG_ERROR,
    EXIT_INTERNAL,
    EXIT_PARSE,
    INTERNAL_ERROR,
    DatasetError,
    EvaluationError,
    GprwiError,
    NetworkError,
    SceneError,
    SignalError,
    SimulationError,
    TrainingError,
    error_payload,
    exit_status,
)
from .evaluation import (
    DEFAULT_CATALOG,
    MaterialCatalog,
    classify_material,
    evaluate_predictions,
    load_catalog,
    mean_predictor_baseline,
    render_report,
    report_csv,
)
from .fdtd import run_bscan
from .inversion import (
    TrainingSet,
    build_model,
    compare_transfer,
    fine_tune,
    load_model,
    predict_arrays,
    predict_batch,
    save_model,
    train,
)
from .logging import configure_logging, get_logger
from .metrics import MetricsRegistry, install_registry, record_error, summary_payload
from .preprocess import prepare_radargram, read_radargram
from .schemas import validate_payload
from .scene import SCENE_PRESETS, read_scene, render_stack
from .storage import DatasetManifest, atomic_write_text, read_bscan, read_manifest, write_bscan
from .traveltime import sweep

__all__ = ["build_parser", "main"]

logger = get_logger(__name__)

_STAGES: tuple[tuple[type[GprwiError], str], ...] = (
    (SceneError, "scene"),
    (SimulationError, "simulation"),
    (DatasetError, "dataset"),
    (SignalError, "preprocess"),
    (NetworkError, "network"),
    (TrainingError, "training"),
    (EvaluationError, "evaluation"),
)


class Outputs:
    """Paths a command writes; the ones that did not exist beforehand are removed on failure."""

    def __init__(self) -> None:
        self._claimed: list[tuple[Path, bool]] = []

    def claim(self, path: Path) -> Path:
        self._claimed.append((path, path.exists()))
        return path

    @property
    def paths(self) -> list[str]:
        return [str(path) for path, _ in self._claimed]

    def discard(self) -> None:
        for path, existed in reversed(self._claimed):
            if existed:
                continue
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            else:
                path.unlink(missing_ok=True)
                path.with_name(f".{path.name}.tmp").unlink(missing_ok=True)


Handler = Callable[[argparse.Namespace, RunConfig, Outputs], dict[str, Any]]


def _progress() -> Progress:
    console = Console(stderr=True)
    return Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
        disable=not console.is_terminal,
    )


def _required(cfg: RunConfig, key: str, flag: str) -> Path:
    path = cfg.paths.get(key)
    if path is None:
        raise GprwiError(ARGUMENT_ERROR, f"{flag} is required")
    return path


def _catalog(cfg: RunConfig) -> MaterialCatalog:
    path = cfg.paths.get("catalog")
    return load_catalog(path) if path is not None else DEFAULT_CATALOG


def _training_sets(manifest: DatasetManifest, cfg: RunConfig) -> tuple[TrainingSet, TrainingSet]:
    train_manifest, test_manifest = split_dataset(manifest, cfg.dataset.split_ratio, cfg.dataset.split_seed)
    sets = []
    for part in (train_manifest, test_manifest):
        x, y, ids = load_arrays(part, shape=cfg.model.input_shape, dtype=cfg.model.dtype)
        sets.append(TrainingSet(x, y, tuple(ids)))
    return sets[0], sets[1]


# --- subcommands ------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace, cfg: RunConfig, outputs: Outputs) -> dict[str, Any]:
    if args.preset is not None:
        config = replace(SCENE_PRESETS[args.preset], seed=cfg.seed)
    else:
        config = read_scene(_required(cfg, "scene", "--scene or --preset"))
    out = _required(cfg, "out", "--out")
    scan = run_bscan(config, cfg.simulation)
    write_bscan(outputs.claim(out), scan)
    return {"layers": len(config.layers), "shape": list(scan.shape)}


def cmd_gen_dataset(args: argparse.Namespace, cfg: RunConfig, outputs: Outputs) -> dict[str, Any]:
    out = outputs.claim(_required(cfg, "out", "--out"))
    n = cfg.dataset.n_samples
    with _progress() as progress:
        task = progress.add_task("simulating", total=n)
        manifest = generate_dataset(
            n,
            cfg.seed,
            out,
            settings=cfg.simulation,
            sampler=cfg.sampler,
            workers=cfg.workers,
            on_sample=lambda _entry: progress.advance(task),
        )
    return {"samples": manifest.n_samples}


def cmd_preprocess(args: argparse.Namespace, cfg: RunConfig, outputs: Outputs) -> dict[str, Any]:
    raw = read_radargram(_required(cfg, "input", "--input"))
    out = outputs.claim(_required(cfg, "out", "--out"))
    segments = prepare_radargram(raw, np.random.default_rng(cfg.seed), cfg.preprocess, n_samples=cfg.simulation.n_samples)
    scene_path = cfg.paths.get("scene")
    if scene_path is not None:
        manifest = write_labeled_segments(segments, read_scene(scene_path), out, split_seed=cfg.dataset.split_seed)
        return {"segments": manifest.n_samples, "labeled": True}
    for index, piece in enumerate(segments):
        write_bscan(out / f"segment_{index:03d}.bscan", piece)
    return {"segments": len(segments), "labeled": False}


def _write_report(cfg: RunConfig, outputs: Outputs, text: str) -> None:
    path = cfg.paths.get("report")
    if path is not None:
        atomic_write_text(outputs.claim(path), text)


def cmd_train(args: argparse.Namespace, cfg: RunConfig, outputs: Outputs) -> dict[str, Any]:
    manifest = read_manifest(_required(cfg, "dataset", "--dataset"))
    out = _required(cfg, "out", "--out")
    train_set, test_set = _training_sets(manifest, cfg)
    with _progress() as progress:
        task = progress.add_task("training", total=cfg.model.epochs)
        model, report = train(
            build_model(cfg.model),
            train_set,
            test_set,
            cfg.model,
            on_epoch=lambda *_: progress.advance(task),
        )
    save_model(outputs.claim(out), model)
    _write_report(cfg, outputs, report.to_csv(include_timing=not args.no_timing))
    return {"train_samples": len(train_set), "test_samples": len(test_set), **report.metrics}


def cmd_finetune(args: argparse.Namespace, cfg: RunConfig, outputs: Outputs) -> dict[str, Any]:
    pretrained = _required(cfg, "pretrained", "--from")
    manifest = read_manifest(_required(cfg, "dataset", "--dataset"))
    out = _required(cfg, "out", "--out")
    train_set, test_set = _training_sets(manifest, cfg)
    fields: dict[str, Any] = {"train_samples": len(train_set), "test_samples": len(test_set)}
    if args.compare:
        comparison = compare_transfer(pretrained, train_set, test_set, cfg.model, catalog=_catalog(cfg))
        sys.stdout.write(comparison.render())
        model, model_report = comparison.tuned, comparison.pretrained_report
        fields["fresh_best_test_loss"] = comparison.fresh_report.metrics.get("best_test_loss")
    else:
        model, model_report = fine_tune(pretrained, train_set, test_set, cfg.model)
    save_model(outputs.claim(out), model)
    _write_report(cfg, outputs, model_report.to_csv(include_timing=not args.no_timing))
    fields.update(model_report.metrics)
    return fields


def _prediction_record(name: str, decoded: Any, raw: Any, catalog: MaterialCatalog) -> dict[str, Any]:
    return {
        "scan": name,
        "raw": [float(value) for value in raw.as_array()],
        "layers": [
            {
                "thickness_m": float(layer.thickness_m),
                "eps_r": float(layer.eps_r),
                "material": classify_material(layer.eps_r, catalog),
            }
            for layer in decoded.layers
        ],
        "total_thickness_m": decoded.total_thickness_m,
    }


def cmd_predict(args: argparse.Namespace, cfg: RunConfig, outputs: Outputs) -> dict[str, Any]:
    model = load_model(_required(cfg, "model", "--model"), cfg.model)
    catalog = _catalog(cfg)
    scan_paths = [Path(value).expanduser().resolve() for value in args.scan]
    scans = [read_bscan(path) for path in scan_paths]
    results = predict_batch(model, scans)
    for path, (decoded, raw) in zip(scan_paths, results):
        record = _prediction_record(path.name, decoded, raw, catalog)
        if args.format == "json-lines":
            validate_payload("prediction", record)
            sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
        else:
            materials = [layer["material"] for layer in record["layers"]]
            sys.stdout.write(render_stack(decoded, materials, title=path.name) + "\n")
    return {"scans": len(results)}


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig, outputs: Outputs) -> dict[str, Any]:
    model = load_model(_required(cfg, "model", "--model"), cfg.model)
    manifest = read_manifest(_required(cfg, "dataset", "--dataset"))
    catalog = _catalog(cfg)
    baseline = None
    if args.split == "all":
        x, y, _ = load_arrays(manifest, shape=cfg.model.input_shape, dtype=cfg.model.dtype)
        data = TrainingSet(x, y)
    else:
        train_set, test_set = _training_sets(manifest, cfg)
        data = train_set if args.split == "train" else test_set
        baseline = mean_predictor_baseline(train_set.y, data.y, catalog)
    report = evaluate_predictions(predict_arrays(model, data.x), data.y, catalog, label=args.split)
    sys.stdout.write(render_report(report))
    out = cfg.paths.get("out")
    if out is not None:
        atomic_write_text(outputs.claim(out), report_csv(report))
    fields: dict[str, Any] = {
        "samples": report.n_samples,
        "thickness_mae_mm": report.thickness.overall,
        "permittivity_mae": report.permittivity.overall,
        "accuracy": report.accuracy,
    }
    if baseline is not None:
        fields["baseline_thickness_mae_mm"] = baseline.thickness.overall
    return fields


def _parse_values(text: str) -> list[float]:
    try:
        values = [float(token) for token in text.split(",") if token.strip()]
    except ValueError as exc:
        raise GprwiError(ARGUMENT_ERROR, f"--values must be comma-separated numbers, got {text!r}") from exc
    if not values:
        raise GprwiError(ARGUMENT_ERROR, "--values may not be empty")
    return values


def cmd_sweep(args: argparse.Namespace, cfg: RunConfig, outputs: Outputs) -> dict[str, Any]:
    out = _required(cfg, "out", "--out")
    points = sweep(
        args.parameter,
        _parse_values(args.values),
        thickness_m=args.thickness,
        eps_r=args.eps,
        sigma=args.sigma,
        settings=cfg.simulation,
    )
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([args.parameter, "lag_s", "normal_lag_s", "expected_lag_s", "amplitude"])
    writer.writerows(point.as_row() for point in points)
    atomic_write_text(outputs.claim(out), buffer.getvalue())
    return {"points": len(points)}


# --- parser -----------------------------------------------------------------


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config-file", dest="config_file", metavar="PATH", help="TOML configuration file. Default: none.")
    common.add_argument("--seed", type=int, metavar="INT", help="Master seed for every random choice (default: 0 or GPRWI_SEED).")
    common.add_argument(
        "--log-level",
        dest="log_level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        type=str.upper,
        help="Log level for stderr output (default: INFO).",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gprwi",
        description="GPR wall inversion: simulate B-scans, build datasets, train and apply the inversion network.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    simulate = sub.add_parser("simulate", parents=[common], help="Simulate one B-scan of a wall.")
    source = simulate.add_mutually_exclusive_group(required=True)
    source.add_argument("--scene", metavar="PATH", help="Scene file with 'layer', 'grain' and 'seed' lines.")
    source.add_argument("--preset", choices=sorted(SCENE_PRESETS), help="Built-in reference wall.")
    simulate.add_argument("--out", metavar="PATH", help="Output .bscan file.")
    simulate.set_defaults(handler=cmd_simulate)

    gen = sub.add_parser("gen-dataset", parents=[common], help="Generate a labelled synthetic dataset.")
    gen.add_argument("-n", dest="n_samples", type=int, metavar="N", help="Number of samples (default: 500).")
    gen.add_argument("--out", metavar="DIR", help="Dataset directory.")
    gen.add_argument("--workers", type=int, metavar="N", help="Simulation processes (default: 1).")
    gen.set_defaults(handler=cmd_gen_dataset)

    prep = sub.add_parser("preprocess", parents=[common], help="Turn a measured radargram into network-ready segments.")
    prep.add_argument("--input", metavar="PATH", help="Radargram as .bscan or CSV with a 'dt=<seconds>' first line.")
    prep.add_argument("--scene", metavar="PATH", help="Known wall; labels the segments and writes a dataset.")
    prep.add_argument("--out", metavar="DIR", help="Output directory.")
    prep.add_argument("--cutoff-hz", dest="cutoff_hz", type=float, metavar="HZ", help="High-pass cutoff (default: 5e8).")
    prep.add_argument("--segment-width", dest="segment_width", type=int, metavar="N", help="Traces per segment (default: 40).")
    prep.add_argument(
        "--segments-per-scan", dest="segments_per_scan", type=int, metavar="K", help="Segments drawn (default: 8)."
    )
    prep.set_defaults(handler=cmd_preprocess)

    def training_flags(command: argparse.ArgumentParser) -> None:
        command.add_argument("--dataset", metavar="DIR", help="Dataset directory with a manifest.")
        command.add_argument("--out", metavar="PATH", help="Output checkpoint.")
        command.add_argument("--report", metavar="PATH", help="Per-epoch loss CSV.")
        command.add_argument("--epochs", type=int, metavar="N", help="Maximum epochs (default: 100).")
        command.add_argument("--batch-size", dest="batch_size", type=int, metavar="N", help="Mini-batch size (default: 16).")
        command.add_argument("--lr", type=float, metavar="RATE", help="Adam learning rate (default: 0.001).")
        command.add_argument("--patience", type=int, metavar="N", help="Early-stopping patience, 0 disables (default: 20).")
        command.add_argument("--no-timing", dest="no_timing", action="store_true", help="Omit the seconds column from the report.")

    train_cmd = sub.add_parser("train", parents=[common], help="Train the inversion network from scratch.")
    training_flags(train_cmd)
    train_cmd.set_defaults(handler=cmd_train)

    tune = sub.add_parser("finetune", parents=[common], help="Continue training from a checkpoint.")
    tune.add_argument("--from", dest="pretrained", metavar="PATH", help="Pretrained checkpoint.")
    tune.add_argument("--compare", action="store_true", help="Also train from scratch and print both results side by side.")
    tune.add_argument("--catalog", metavar="PATH", help="Material catalog for the comparison ('name,eps_r' lines).")
    training_flags(tune)
    tune.set_defaults(handler=cmd_finetune)

    predict = sub.add_parser("predict", parents=[common], help="Invert B-scans into layer stacks.")
    predict.add_argument("--model", metavar="PATH", help="Checkpoint.")
    predict.add_argument("--scan", metavar="PATH", nargs="+", required=True, help="One or more .bscan files.")
    predict.add_argument("--format", choices=["text", "json-lines"], default="text", help="Output format (default: text).")
    predict.add_argument("--catalog", metavar="PATH", help="Material catalog ('name,eps_r' lines).")
    predict.set_defaults(handler=cmd_predict)

    evaluate = sub.add_parser("evaluate", parents=[common], help="Score a checkpoint on a dataset.")
    evaluate.add_argument("--model", metavar="PATH", help="Checkpoint.")
    evaluate.add_argument("--dataset", metavar="DIR", help="Dataset directory with a manifest.")
    evaluate.add_argument("--catalog", metavar="PATH", help="Material catalog ('name,eps_r' lines).")
    evaluate.add_argument("--out", metavar="PATH", help="Report CSV.")
    evaluate.add_argument(
        "--split", choices=["test", "train", "all"], default="test", help="Which part of the split to score (default: test)."
    )
    evaluate.set_defaults(handler=cmd_evaluate)

    sweep_cmd = sub.add_parser("sweep", parents=[common], help="Reflection lag and amplitude over one slab parameter.")
    sweep_cmd.add_argument("--parameter", choices=["eps_r", "thickness", "sigma"], required=True, help="Parameter to vary.")
    sweep_cmd.add_argument("--values", required=True, metavar="LIST", help="Comma-separated values.")
    sweep_cmd.add_argument("--thickness", type=float, default=0.10, metavar="M", help="Slab thickness (default: 0.10).")
    sweep_cmd.add_argument("--eps", type=float, default=4.0, metavar="EPS", help="Slab permittivity (default: 4.0).")
    sweep_cmd.add_argument("--sigma", type=float, metavar="S/M", help="Slab conductivity (default: simulation.layer_sigma).")
    sweep_cmd.add_argument("--out", metavar="PATH", help="Output CSV.")
    sweep_cmd.set_defaults(handler=cmd_sweep)

    return parser


def _overrides(args: argparse.Namespace) -> dict[str, dict[str, Any]]:
    def pick(*names: str) -> dict[str, Any]:
        return {name: getattr(args, name, None) for name in names}

    return {
        "run": pick("seed", "log_level", "workers"),
        "dataset": pick("n_samples"),
        "preprocess": pick("cutoff_hz", "segment_width", "segments_per_scan"),
        "model": pick("epochs", "batch_size", "lr", "patience"),
        "paths": {key: getattr(args, key, None) for key in PATH_KEYS},
    }


def _stage(exc: GprwiError) -> str:
    for cls, stage in _STAGES:
        if isinstance(exc, cls):
            return stage
    return "run"


def _emit(payload: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
    sys.stdout.flush()


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit status."""

    args = build_parser().parse_args(argv)
    command: str = args.command
    handler: Handler = args.handler
    registry = MetricsRegistry()
    install_registry(registry)
    outputs = Outputs()
    fields: dict[str, Any] = {}
    error: dict[str, Any] | None = None
    status = 0

    try:
        cfg = load_run_config(args.config_file, _overrides(args))
        configure_logging(cfg.log_level)
        fields["seed"] = cfg.seed
        logger.info("cli.command.start", extra={"context": {"command": command, "seed": cfg.seed}})
        fields.update(handler(args, cfg, outputs))
    except ConfigError as exc:
        status = EXIT_PARSE
        error = error_payload(CONFIG_ERROR, str(exc))
        logger.error("%s: configuration failed: %s", command, exc)
    except GprwiError as exc:
        status = exit_status(exc)
        error = exc.to_dict()
        error.setdefault("details", {})["stage"] = _stage(exc)
        record_error(exc.code)
        logger.error("%s: %s failed: %s", command, _stage(exc), exc.message)
    except OSError as exc:
        status = exit_status(exc)
        error = error_payload("IO_ERROR", str(exc))
        logger.error("%s: i/o failed: %s", command, exc)
    except Exception as exc:  # noqa: BLE001
        status = EXIT_INTERNAL
        error = error_payload(INTERNAL_ERROR, f"{type(exc).__name__}: {exc}")
        logger.exception("%s: unexpected failure", command)

    if status != 0:
        outputs.discard()
        fields["outputs"] = []
    else:
        fields["outputs"] = outputs.paths
    if error is not None:
        fields["error"] = error
    payload = summary_payload(command, status, registry.snapshot(), **fields)
    validate_payload("summary", payload)
    _emit(payload)
    install_registry(None)
    return status


if __name__ == "__main__":  # pragma: no cover - manual invocation only
    raise SystemExit(main())
