"""Per-epoch training records and their CSV form."""

import csv
import io
from dataclasses import astuple, dataclass, fields

TELEMETRY_HEADER = (
    "epoch",
    "step",
    "train_loss",
    "train_metric",
    "val_loss",
    "val_metric",
    "lr",
    "trainable_params",
    "total_params",
    "compression_pct",
    "trainable_pct",
    "mean_stability",
    "mean_similarity",
    "rank_per_layer",
)


@dataclass
class TelemetryRow:
    """One epoch of training.

    ``train_metric``/``val_metric`` hold accuracy for classification and MSE
    for regression. Stability columns stay ``None`` until a lagged comparison
    is available.
    """

    epoch: int
    step: int
    train_loss: float
    train_metric: float
    val_loss: float
    val_metric: float
    lr: float
    trainable_params: int
    total_params: int
    compression_pct: float
    trainable_pct: float
    mean_stability: float = None
    mean_similarity: float = None
    rank_per_layer: tuple = ()


assert tuple(f.name for f in fields(TelemetryRow)) == TELEMETRY_HEADER

_METRIC_NAME = {"classification": "acc", "regression": "mse"}


def csv_header(task="classification"):
    """CSV column names; the metric columns are named after the task's metric."""
    if task not in _METRIC_NAME:
        raise ValueError(f"unknown task {task!r}")
    name = _METRIC_NAME[task]
    return tuple(h.replace("metric", name) for h in TELEMETRY_HEADER)


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ";".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def telemetry_csv(rows, task="classification"):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_header(task))
    for row in rows:
        writer.writerow([_cell(v) for v in astuple(row)])
    return buf.getvalue()


def read_telemetry_csv(path):
    """Rows as dicts of strings keyed by the CSV header, which is checked."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header not in {csv_header(t) for t in _METRIC_NAME}:
            raise ValueError(f"{path}: unexpected telemetry header {header}")
        return [dict(zip(header, r)) for r in reader]
