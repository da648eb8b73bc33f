"""Tracking how a network's orthogonal bases and mixing matrices drift.

For each dense weight a snapshot stores its orthogonal component ``U V^T`` and
the upper-triangular mixing factor ``R`` of its QR decomposition. Two snapshots
of the same layer are compared with a trace-based stability score and a
Euclidean similarity of their mixing factors. Wide weights are transposed to
tall orientation first, so every stored ``uv`` is ``m x n`` with ``m >= n`` and
``r_mix`` is ``n x n``.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix
from .exceptions import ConfigError, ShapeError
from .factorization import materialize
from .linalg import orthogonal_component, qr_mixing

STABILITY_MODES = ("min_rank", "rows")
MEAN_ID = "mean"


@dataclass
class LayerBasis:
    """One layer's entry in a :class:`BasisSnapshot`."""

    layer_id: str
    uv: np.ndarray
    r_mix: np.ndarray
    rank: int

    @property
    def full_shape(self):
        return self.uv.shape


@dataclass
class BasisSnapshot:
    epoch: int
    layers: list = field(default_factory=list)

    def by_id(self):
        return OrderedDict((entry.layer_id, entry) for entry in self.layers)


@dataclass(frozen=True)
class StabilityRecord:
    epoch_i: int
    epoch_j: int
    layer_id: str
    stability: float
    similarity: float


def stability(b_i, b_j, mode="min_rank"):
    """Trace similarity ``tr(uv_i @ uv_j.T)`` of two orthogonal components.

    ``mode="min_rank"`` divides by ``min(rank_i, rank_j)`` so that identical
    bases score exactly 1. ``mode="rows"`` divides by the row count ``m``
    instead; that only reaches 1 for square full-rank weights. The value is
    not clamped and is negative for sign-flipped bases.
    """
    if b_i.uv.shape != b_j.uv.shape:
        raise ShapeError(f"layer {b_i.layer_id}: cannot compare bases of shape {b_i.uv.shape} and {b_j.uv.shape}")
    trace = float(np.sum(b_i.uv * b_j.uv))
    if mode == "min_rank":
        return trace / min(b_i.rank, b_j.rank)
    if mode == "rows":
        return trace / b_i.uv.shape[0]
    raise ConfigError(f"unknown stability mode {mode!r}; expected one of {STABILITY_MODES}")


def mixing_similarity(r_i, r_j, weight_size):
    """``1 - sqrt(sum((r_i - r_j)**2) / weight_size)``.

    ``weight_size`` is the element count ``m * n`` of the original weight, not
    of the mixing matrices.
    """
    r_i = as_matrix(r_i, "r_i")
    r_j = as_matrix(r_j, "r_j")
    if r_i.shape != r_j.shape:
        raise ShapeError(f"mixing matrices differ in shape: {r_i.shape} vs {r_j.shape}")
    d = r_i - r_j
    return 1.0 - float(np.sqrt(np.sum(d * d) / weight_size))


def _tall(a):
    return a.T if a.shape[0] < a.shape[1] else a


def layer_basis(layer):
    """Snapshot entry for a :class:`~oialr.nn.DenseLayer`."""
    if layer.is_low_rank:
        w = layer.low_rank
        uv = w.u @ w.v.T
        _, r_mix = qr_mixing(_tall(materialize(w)))
        rank = w.rank
    else:
        uv = orthogonal_component(layer.weight)
        _, r_mix = qr_mixing(_tall(layer.weight))
        rank = min(layer.weight.shape)
    return LayerBasis(layer.layer_id, np.ascontiguousarray(_tall(uv)), r_mix, rank)


def take_snapshot(model, epoch):
    layers = model.dense_layers
    if not layers:
        raise ConfigError("model has no factorizable weights")
    return BasisSnapshot(epoch=int(epoch), layers=[layer_basis(l) for l in layers])


def compare_snapshots(snap_i, snap_j, mode="min_rank"):
    """Per-layer records comparing ``snap_i`` (later) with ``snap_j`` plus a mean row."""
    earlier = snap_j.by_id()
    records = []
    for entry in snap_i.layers:
        other = earlier.get(entry.layer_id)
        if other is None:
            continue
        records.append(
            StabilityRecord(
                snap_i.epoch,
                snap_j.epoch,
                entry.layer_id,
                stability(entry, other, mode),
                mixing_similarity(entry.r_mix, other.r_mix, entry.uv.size),
            )
        )
    if records:
        records.append(
            StabilityRecord(
                snap_i.epoch,
                snap_j.epoch,
                MEAN_ID,
                float(np.mean([r.stability for r in records])),
                float(np.mean([r.similarity for r in records])),
            )
        )
    return records


def lagged_report(history, lag, mode="min_rank"):
    """Compare every snapshot with the one exactly ``lag`` epochs before it."""
    if lag < 1:
        raise ConfigError(f"lag must be >= 1, got {lag}")
    by_epoch = {s.epoch: s for s in history}
    records = []
    for snap in sorted(history, key=lambda s: s.epoch):
        prior = by_epoch.get(snap.epoch - lag)
        if prior is not None:
            records.extend(compare_snapshots(snap, prior, mode))
    return records


class SnapshotTracker:
    """Keeps recent snapshots in memory and answers lagged comparisons.

    Snapshots older than ``budget`` entries are evicted; ``loader(epoch)`` (for
    example reading a saved epoch checkpoint) is consulted when an evicted one
    is needed again.
    """

    def __init__(self, lag=5, budget=8, mode="min_rank", loader=None):
        if lag < 1:
            raise ConfigError(f"lag must be >= 1, got {lag}")
        self.lag = lag
        self.budget = max(budget, lag)
        self.mode = mode
        self.loader = loader
        self._snaps = OrderedDict()

    def __len__(self):
        return len(self._snaps)

    def get(self, epoch):
        snap = self._snaps.get(epoch)
        if snap is None and self.loader is not None and epoch >= 0:
            snap = self.loader(epoch)
        return snap

    def add(self, snapshot):
        """Store ``snapshot``; returns its comparison records (maybe empty)."""
        prior = self.get(snapshot.epoch - self.lag)
        self._snaps[snapshot.epoch] = snapshot
        while len(self._snaps) > self.budget:
            self._snaps.popitem(last=False)
        return [] if prior is None else compare_snapshots(snapshot, prior, self.mode)
