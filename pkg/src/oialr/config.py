"""Strict JSON run configuration.

Example::

    {
      "seed": 0,
      "out_dir": "runs/blobs",
      "dataset": {"kind": "blobs", "classes": 10, "dims": 784, "samples_per_class": 300},
      "model": {"hidden": [256, 128], "activation": "relu"},
      "train": {"epochs": 15, "batch_size": 64, "warmup_epochs": 2}
    }

Unknown keys are rejected at every level. ``train`` accepts the fields of
:class:`~oialr.trainer.TrainConfig` except ``seed``; ``beta`` and ``alpha``
default to 0.1 and ``delay`` to a third of the total steps.
"""

import json
import os
from dataclasses import dataclass, fields

from .data import load_csv_series, load_idx, synth_blobs
from .exceptions import ConfigError
from .nn import ACTIVATIONS, build_mlp
from .trainer import TrainConfig

_DATASET_KEYS = {
    "blobs": ({"classes", "dims", "samples_per_class"}, {"spread": 1.0, "center_scale": 1.0, "seed": 0}),
    "idx": ({"train_images", "train_labels"}, {"test_images": None, "test_labels": None}),
    "csv": ({"path", "input_len", "pred_len"}, {"train_fraction": 0.8}),
}
_PATH_KEYS = {"train_images", "train_labels", "test_images", "test_labels", "path"}
_TOP_KEYS = {"seed", "out_dir", "dataset", "model", "train"}
_MODEL_KEYS = {"hidden": [], "activation": "relu"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


@dataclass
class RunConfig:
    dataset: dict
    model: dict
    train: TrainConfig
    out_dir: str = None
    seed: int = 0
    base_dir: str = "."


def _check_keys(section, where, allowed, required=()):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    missing = sorted(set(required) - set(section))
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {', '.join(missing)}")


def parse_config(doc, base_dir=".", seed=None):
    """Validate a decoded config document; ``seed`` overrides the file's seed."""
    _check_keys(doc, "config", _TOP_KEYS, {"dataset", "train"})

    ds = doc["dataset"]
    _check_keys(ds, "dataset", {"kind"} | set().union(*(r | set(o) for r, o in _DATASET_KEYS.values())), {"kind"})
    kind = ds["kind"]
    if kind not in _DATASET_KEYS:
        raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {sorted(_DATASET_KEYS)}")
    required, optional = _DATASET_KEYS[kind]
    _check_keys(ds, f"dataset ({kind})", {"kind"} | required | set(optional), required)
    dataset = {**optional, **ds}
    if kind == "idx" and (dataset["test_images"] is None) != (dataset["test_labels"] is None):
        raise ConfigError("dataset: give both test_images and test_labels, or neither")

    model = doc.get("model", {})
    _check_keys(model, "model", _MODEL_KEYS)
    model = {**_MODEL_KEYS, **model}
    if model["activation"] not in ACTIVATIONS:
        raise ConfigError(f"model.activation must be one of {ACTIVATIONS}")
    if not all(isinstance(h, int) and h >= 1 for h in model["hidden"]):
        raise ConfigError("model.hidden must be a list of positive integers")

    tr = doc["train"]
    _check_keys(tr, "train", _TRAIN_KEYS)
    run_seed = int(doc.get("seed", 0) if seed is None else seed)
    try:
        train = TrainConfig(seed=run_seed, **tr).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(dataset, model, train, doc.get("out_dir"), run_seed, base_dir)


def load_config(path, seed=None):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, os.path.dirname(os.path.abspath(path)), seed)


def build_dataset(cfg):
    ds = dict(cfg.dataset)
    kind = ds.pop("kind")
    for key in _PATH_KEYS & set(ds):
        if ds[key] is not None:
            ds[key] = os.path.join(cfg.base_dir, ds[key])
    if kind == "blobs":
        return synth_blobs(**ds)
    if kind == "idx":
        data = load_idx(ds["train_images"], ds["train_labels"])
        if ds["test_images"] is not None:
            data = data.with_test(load_idx(ds["test_images"], ds["test_labels"]))
        return data
    return load_csv_series(**ds)


def build_model(cfg, dataset):
    sizes = [dataset.n_features, *cfg.model["hidden"], dataset.output_dim]
    return build_mlp(sizes, cfg.model["activation"], seed=cfg.seed)
