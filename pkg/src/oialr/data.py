"""Desk-scale datasets: Gaussian blobs, IDX (MNIST-format) files, CSV series."""

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataFormatError, IdxCountMismatchError, IdxMagicError, IdxTruncatedError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Features and targets with the first ``n_train`` rows forming the train split.

    ``targets`` holds integer class indices for classification and a float
    matrix for regression.
    """

    features: np.ndarray
    targets: np.ndarray
    n_train: int
    task: str = "classification"
    n_classes: int = 0
    norm_mean: np.ndarray = None
    norm_std: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.features) != len(self.targets):
            raise DataFormatError(f"{len(self.features)} feature rows but {len(self.targets)} targets")
        if not 0 <= self.n_train <= len(self.features):
            raise DataFormatError(f"train boundary {self.n_train} outside [0, {len(self.features)}]")
        if np.isnan(self.features).any():
            raise DataFormatError("features contain NaN")

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def output_dim(self):
        return self.n_classes if self.task == "classification" else self.targets.shape[1]

    @property
    def x_train(self):
        return self.features[: self.n_train]

    @property
    def y_train(self):
        return self.targets[: self.n_train]

    @property
    def x_test(self):
        return self.features[self.n_train :]

    @property
    def y_test(self):
        return self.targets[self.n_train :]

    def with_test(self, other):
        """Append ``other`` (all rows) as the test split."""
        return Dataset(
            np.concatenate([self.x_train, other.features]),
            np.concatenate([self.y_train, other.targets]),
            self.n_train,
            self.task,
            max(self.n_classes, other.n_classes),
            self.norm_mean,
            self.norm_std,
            dict(self.meta),
        )


def shuffled_indices(n, seed, epoch):
    """Permutation of ``range(n)`` determined only by ``(seed, epoch)``."""
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def iter_batches(n, batch_size, seed, epoch):
    """Yield index arrays covering every sample; the last batch may be short."""
    order = shuffled_indices(n, seed, epoch)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def synth_blobs(classes, dims, samples_per_class, spread=1.0, seed=0, center_scale=1.0, train_fraction=0.8):
    """Isotropic Gaussian clusters around seeded random centers.

    Each class contributes ``round(train_fraction * samples_per_class)`` rows
    to the train split and the rest to the test split.
    """
    if classes < 2 or dims < 1 or samples_per_class < 2:
        raise ConfigError("synth_blobs needs classes >= 2, dims >= 1 and samples_per_class >= 2")
    if spread < 0:
        raise ConfigError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(classes, dims))
    n_tr = int(round(train_fraction * samples_per_class))
    n_tr = min(max(n_tr, 1), samples_per_class - 1)
    parts = {"xtr": [], "ytr": [], "xte": [], "yte": []}
    for c in range(classes):
        x = centers[c] + spread * rng.standard_normal((samples_per_class, dims))
        parts["xtr"].append(x[:n_tr])
        parts["xte"].append(x[n_tr:])
        parts["ytr"].append(np.full(n_tr, c))
        parts["yte"].append(np.full(samples_per_class - n_tr, c))
    tr_order = rng.permutation(classes * n_tr)
    te_order = rng.permutation(classes * (samples_per_class - n_tr))
    xtr = np.concatenate(parts["xtr"])[tr_order]
    ytr = np.concatenate(parts["ytr"])[tr_order]
    xte = np.concatenate(parts["xte"])[te_order]
    yte = np.concatenate(parts["yte"])[te_order]
    return Dataset(
        np.concatenate([xtr, xte]),
        np.concatenate([ytr, yte]).astype(np.int64),
        len(xtr),
        "classification",
        classes,
        meta={"source": "blobs", "seed": seed},
    )


def _read_idx(path, magic, what):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: bad magic 0x{found:08x} for {what} (expected 0x{magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxTruncatedError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair; pixels are scaled to ``[0, 1]`` and flattened.

    All rows form the train split; attach a test pair with :meth:`Dataset.with_test`.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    targets = labels.astype(np.int64)
    n_classes = int(targets.max()) + 1 if targets.size else 0
    return Dataset(features, targets, len(features), "classification", n_classes, meta={"source": "idx"})


def write_idx(path, array, kind):
    """Write uint8 ``array`` as an IDX file (``kind`` is "images" or "labels")."""
    arr = np.asarray(array, dtype=np.uint8)
    magic = IDX_IMAGES_MAGIC if kind == "images" else IDX_LABELS_MAGIC
    if arr.ndim != (magic & 0xFF):
        raise ValueError(f"{kind} array must have {magic & 0xFF} dimensions")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def _read_numeric_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
            vals = []
            for j, cell in enumerate(row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataFormatError(f"{path}: non-numeric cell {cell!r} at row {i}, column {j + 1}") from None
            rows.append(vals)
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def window_count(n_rows, input_len, pred_len):
    return max(n_rows - input_len - pred_len + 1, 0)


def load_csv_series(path, input_len, pred_len, train_fraction=0.8):
    """Sliding-window forecasting set from a numeric CSV with a header row.

    Windows advance by one row. Features are the flattened ``input_len`` rows,
    targets the flattened next ``pred_len`` rows. The first
    ``train_fraction`` of windows form the train split; per-column z-scores use
    only the rows those windows touch, and zero-variance columns map to 0.
    """
    if input_len < 1 or pred_len < 1:
        raise ConfigError("input_len and pred_len must be >= 1")
    header, series = _read_numeric_csv(path)
    n_rows = series.shape[0]
    n_win = window_count(n_rows, input_len, pred_len)
    if n_win < 1:
        raise DataFormatError(f"{path}: {n_rows} rows cannot hold one window of {input_len}+{pred_len}")
    n_train = min(max(int(n_win * train_fraction), 1), n_win)
    train_rows = series[: n_train - 1 + input_len + pred_len]
    mean = train_rows.mean(axis=0)
    std = train_rows.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    z = np.where(std > 0, (series - mean) / safe, 0.0)
    starts = np.arange(n_win)
    x_idx = starts[:, None] + np.arange(input_len)[None, :]
    y_idx = starts[:, None] + input_len + np.arange(pred_len)[None, :]
    features = z[x_idx].reshape(n_win, -1)
    targets = z[y_idx].reshape(n_win, -1)
    return Dataset(
        features,
        targets,
        n_train,
        "regression",
        0,
        mean,
        std,
        meta={"source": "csv", "columns": header, "input_len": input_len, "pred_len": pred_len},
    )
