"""Error metrics, material classification, and report rendering."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EMPTY_CATALOG, EMPTY_INPUT, FORMAT_ERROR, IO_ERROR, SHAPE_ERROR, EvaluationError
from .models import MAX_LAYERS, TargetVector

__all__ = [
    "DEFAULT_CATALOG",
    "LayerErrors",
    "MaterialCatalog",
    "MetricsReport",
    "classification_accuracy",
    "classify_material",
    "evaluate_predictions",
    "load_catalog",
    "mean_predictor_baseline",
    "parse_report_csv",
    "permittivity_errors",
    "render_report",
    "report_csv",
    "thickness_errors",
]

ABSENT = "-"
_CSV_HEADER = ["metric", "overall", "percent", *(f"layer{k}" for k in range(1, MAX_LAYERS + 1))]

TargetsLike = Sequence[TargetVector] | np.ndarray


@dataclass(frozen=True, slots=True)
class MaterialCatalog:
    """Named permittivities; materials sharing a value form one ``a/b`` class."""

    entries: tuple[tuple[str, float], ...]
    classes: tuple[tuple[str, float], ...] = field(init=False)

    def __post_init__(self) -> None:
        entries = tuple((str(name).strip(), float(eps)) for name, eps in self.entries)
        if not entries:
            raise EvaluationError(EMPTY_CATALOG, "material catalog is empty")
        names = [name for name, _ in entries]
        if len(set(names)) != len(names):
            raise EvaluationError(FORMAT_ERROR, "material names must be unique")
        if any(eps <= 0 for _, eps in entries):
            raise EvaluationError(FORMAT_ERROR, "material permittivities must be positive")
        merged: dict[float, list[str]] = {}
        for name, eps in entries:
            merged.setdefault(eps, []).append(name)
        classes = tuple(sorted(((("/".join(group)), eps) for eps, group in merged.items()), key=lambda item: item[1]))
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "classes", classes)

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.classes)

    def class_of(self, name: str) -> str:
        for class_name, _ in self.classes:
            if name in class_name.split("/"):
                return class_name
        raise EvaluationError(FORMAT_ERROR, f"unknown material {name!r}")


DEFAULT_CATALOG = MaterialCatalog(
    entries=(
        ("finery", 5.31),
        ("brick", 3.75),
        ("bitumen", 2.8),
        ("tiles", 21.0),
        ("concrete", 5.31),
        ("mineral wool", 1.5),
        ("plasterboard", 2.58),
        ("steel", 1.0),
        ("heraklith", 1.1),
        ("ytong", 1.7),
        ("styrofoam", 1.06),
        ("mortar", 4.7),
    )
)


def load_catalog(path: Path) -> MaterialCatalog:
    """Read ``name,eps_r`` lines; blank lines and ``#`` comments are skipped."""

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise EvaluationError(IO_ERROR, f"unable to read catalog {path}", details={"path": str(path)}) from exc
    entries: list[tuple[str, float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, sep, value = line.rpartition(",")
        try:
            if not sep or not name.strip():
                raise ValueError(line)
            entries.append((name.strip(), float(value)))
        except ValueError as exc:
            raise EvaluationError(FORMAT_ERROR, f"{path}:{lineno}: expected 'name,eps_r'") from exc
    return MaterialCatalog(entries=tuple(entries))


def classify_material(eps: float, cat: MaterialCatalog = DEFAULT_CATALOG) -> str:
    """Nearest class by permittivity; exact ties go to the lower permittivity."""

    if not cat.classes:
        raise EvaluationError(EMPTY_CATALOG, "material catalog is empty")
    values = np.array([value for _, value in cat.classes])
    return cat.classes[int(np.argmin(np.abs(values - float(eps))))][0]


def _as_matrix(items: TargetsLike, name: str) -> np.ndarray:
    if isinstance(items, np.ndarray):
        matrix = np.asarray(items, dtype=np.float64)
    else:
        matrix = np.array([item.as_array() for item in items], dtype=np.float64).reshape(-1, 2 * MAX_LAYERS)
    if matrix.ndim != 2 or matrix.shape[1] != 2 * MAX_LAYERS:
        raise EvaluationError(SHAPE_ERROR, f"{name} must be (N, {2 * MAX_LAYERS}), got {matrix.shape}")
    return matrix


def _aligned(preds: TargetsLike, targets: TargetsLike) -> tuple[np.ndarray, np.ndarray]:
    p = _as_matrix(preds, "predictions")
    t = _as_matrix(targets, "targets")
    if p.shape[0] == 0 or t.shape[0] == 0:
        raise EvaluationError(EMPTY_INPUT, "no samples to evaluate")
    if p.shape != t.shape:
        raise EvaluationError(SHAPE_ERROR, f"{p.shape[0]} predictions for {t.shape[0]} targets")
    return p, t


@dataclass(frozen=True, slots=True)
class LayerErrors:
    """Mean absolute error overall, as a percentage of the mean true value, and per layer slot.

    ``per_layer[k]`` is ``None`` when no sample has a layer ``k``.
    """

    overall: float
    percent: float
    per_layer: tuple[float | None, ...]


def _layer_errors(pred: np.ndarray, true: np.ndarray, exists: np.ndarray, scale: float) -> LayerErrors:
    if not exists.any():
        raise EvaluationError(EMPTY_INPUT, "no true layers to evaluate")
    abs_err = np.abs(pred - true) * scale
    overall = float(abs_err[exists].mean())
    mean_true = float((true * scale)[exists].mean())
    percent = 100.0 * overall / mean_true if mean_true > 0 else 0.0
    per_layer = tuple(
        float(abs_err[exists[:, k], k].mean()) if exists[:, k].any() else None for k in range(MAX_LAYERS)
    )
    return LayerErrors(overall=overall, percent=percent, per_layer=per_layer)


def thickness_errors(preds: TargetsLike, targets: TargetsLike) -> LayerErrors:
    """Thickness errors in millimetres over every layer present in the targets."""

    p, t = _aligned(preds, targets)
    exists = t[:, :MAX_LAYERS] > 0
    return _layer_errors(p[:, :MAX_LAYERS], t[:, :MAX_LAYERS], exists, 1000.0)


def permittivity_errors(preds: TargetsLike, targets: TargetsLike) -> LayerErrors:
    p, t = _aligned(preds, targets)
    exists = t[:, :MAX_LAYERS] > 0
    return _layer_errors(p[:, MAX_LAYERS:], t[:, MAX_LAYERS:], exists, 1.0)


def classification_accuracy(preds: TargetsLike, targets: TargetsLike, cat: MaterialCatalog = DEFAULT_CATALOG) -> float:
    """Share of true layers whose predicted permittivity lands in the same material class."""

    p, t = _aligned(preds, targets)
    hits = 0
    total = 0
    for row_p, row_t in zip(p, t):
        for k in range(MAX_LAYERS):
            if row_t[k] <= 0:
                continue
            total += 1
            eps_pred = row_p[MAX_LAYERS + k]
            if eps_pred > 0 and classify_material(eps_pred, cat) == classify_material(row_t[MAX_LAYERS + k], cat):
                hits += 1
    if total == 0:
        raise EvaluationError(EMPTY_INPUT, "no true layers to classify")
    return hits / total


@dataclass(frozen=True, slots=True)
class MetricsReport:
    thickness: LayerErrors
    permittivity: LayerErrors
    accuracy: float | None
    n_samples: int
    label: str = ""


def evaluate_predictions(
    preds: TargetsLike,
    targets: TargetsLike,
    catalog: MaterialCatalog | None = DEFAULT_CATALOG,
    *,
    label: str = "",
) -> MetricsReport:
    p, t = _aligned(preds, targets)
    return MetricsReport(
        thickness=thickness_errors(p, t),
        permittivity=permittivity_errors(p, t),
        accuracy=classification_accuracy(p, t, catalog) if catalog is not None else None,
        n_samples=int(t.shape[0]),
        label=label,
    )


def mean_predictor_baseline(
    train_targets: TargetsLike,
    test_targets: TargetsLike,
    catalog: MaterialCatalog | None = DEFAULT_CATALOG,
) -> MetricsReport:
    """Score a constant predictor that always outputs the training-set mean target."""

    train = _as_matrix(train_targets, "train targets")
    test = _as_matrix(test_targets, "test targets")
    if train.shape[0] == 0:
        raise EvaluationError(EMPTY_INPUT, "baseline needs training targets")
    constant = np.broadcast_to(train.mean(axis=0), test.shape)
    return evaluate_predictions(constant, test, catalog, label="mean-predictor")


def _cell(value: float | None) -> str:
    return ABSENT if value is None else f"{value:.1f}"


def render_report(m: MetricsReport) -> str:
    """Fixed-width tables: totals, then one column per layer."""

    title = f"Evaluation {m.label}".rstrip() + f" ({m.n_samples} samples)"
    lines = [title, ""]
    lines.append(f"{'':<24}{'mean':>10}{'percent':>10}")
    lines.append(f"{'thickness error [mm]':<24}{_cell(m.thickness.overall):>10}{_cell(m.thickness.percent):>10}")
    lines.append(f"{'permittivity error':<24}{_cell(m.permittivity.overall):>10}{_cell(m.permittivity.percent):>10}")
    if m.accuracy is not None:
        lines.append(f"{'classification accuracy':<24}{_cell(100.0 * m.accuracy):>10}")
    lines.append("")
    lines.append(f"{'layer':<24}" + "".join(f"{k:>8}" for k in range(1, MAX_LAYERS + 1)))
    lines.append(f"{'thickness error [mm]':<24}" + "".join(f"{_cell(v):>8}" for v in m.thickness.per_layer))
    lines.append(f"{'permittivity error':<24}" + "".join(f"{_cell(v):>8}" for v in m.permittivity.per_layer))
    return "\n".join(lines) + "\n"


def _csv_value(value: float | None) -> str:
    return ABSENT if value is None else repr(float(value))


def report_csv(m: MetricsReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(_CSV_HEADER)
    for metric, errors in (("thickness_mm", m.thickness), ("permittivity", m.permittivity)):
        writer.writerow([metric, _csv_value(errors.overall), _csv_value(errors.percent), *map(_csv_value, errors.per_layer)])
    writer.writerow(["accuracy", _csv_value(m.accuracy), *[""] * (len(_CSV_HEADER) - 2)])
    writer.writerow(["samples", str(m.n_samples), *[""] * (len(_CSV_HEADER) - 2)])
    writer.writerow(["label", m.label, *[""] * (len(_CSV_HEADER) - 2)])
    return buffer.getvalue()


def _parse_value(token: str) -> float | None:
    return None if token == ABSENT else float(token)


def parse_report_csv(text: str) -> MetricsReport:
    rows = {row[0]: row for row in csv.reader(io.StringIO(text)) if row}
    try:
        if rows.get("metric") != _CSV_HEADER:
            raise ValueError("header")
        parsed: dict[str, LayerErrors] = {}
        for metric in ("thickness_mm", "permittivity"):
            row = rows[metric]
            overall, percent = float(row[1]), float(row[2])
            parsed[metric] = LayerErrors(overall, percent, tuple(_parse_value(token) for token in row[3:]))
        return MetricsReport(
            thickness=parsed["thickness_mm"],
            permittivity=parsed["permittivity"],
            accuracy=_parse_value(rows["accuracy"][1]),
            n_samples=int(rows["samples"][1]),
            label=rows["label"][1] if "label" in rows else "",
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise EvaluationError(FORMAT_ERROR, "malformed report CSV") from exc
