"""Adaptive low-rank training (OIALR) for small dense networks in numpy."""

from .estimator import OIALRClassifier, OIALRRegressor
from .exceptions import (
    CheckpointError,
    ConfigError,
    ConvergenceError,
    DataFormatError,
    OIALRError,
    ShapeError,
    StaleCacheError,
    TrainingDivergedError,
)
from .factorization import LowRankWeight, decompose_weight, materialize, truncate_rank, update_basis
from .linalg import compact_svd, matmul, orthogonal_component, qr_mixing
from .metrics import SnapshotTracker, mixing_similarity, stability, take_snapshot
from .nn import build_mlp, convert_to_low_rank
from .optim import AdamW, LrSchedule, lr_at
from .trainer import TrainConfig, train, train_baseline

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "CheckpointError",
    "ConfigError",
    "ConvergenceError",
    "DataFormatError",
    "LowRankWeight",
    "LrSchedule",
    "OIALRClassifier",
    "OIALRError",
    "OIALRRegressor",
    "ShapeError",
    "SnapshotTracker",
    "StaleCacheError",
    "TrainConfig",
    "TrainingDivergedError",
    "build_mlp",
    "compact_svd",
    "convert_to_low_rank",
    "decompose_weight",
    "lr_at",
    "materialize",
    "matmul",
    "mixing_similarity",
    "orthogonal_component",
    "qr_mixing",
    "stability",
    "take_snapshot",
    "train",
    "train_baseline",
    "truncate_rank",
    "update_basis",
]
