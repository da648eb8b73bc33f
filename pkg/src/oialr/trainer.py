"""The adaptive low-rank training loop and its full-rank baseline.

Training runs ``t_max`` optimizer steps (``t = 1 .. t_max``). Each step trains
one mini-batch; afterwards the step's event, if any, is applied:

* ``t == delay``: every eligible dense weight is converted to its SVD factors
  (skipped when ``delay == t_max``, since nothing would train afterwards);
* ``t > delay`` and ``t % nu == 0``: the ``k``-th update event refreshes the
  bases of the last ``ceil(L * alpha * k)`` (capped at ``L``) eligible layers,
  truncates their rank and resets their optimizer state.

With ``start_low_rank`` the conversion happens before step 1 and update
events fire on every multiple of ``nu``.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_fraction
from .data import iter_batches
from .exceptions import ConfigError, TrainingDivergedError
from .factorization import truncate_rank, update_basis
from .metrics import MEAN_ID, STABILITY_MODES, SnapshotTracker, take_snapshot
from .nn import backward, convert_to_low_rank, cross_entropy_loss, eligible_layer_ids, forward, mse_loss, set_low_rank
from .optim import STATE_MODES, AdamW, LrSchedule, lr_at
from .telemetry import TelemetryRow

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of a run. Step counts are optimizer steps.

    Give either ``t_max`` or ``epochs``. ``delay`` defaults to ``t_max // 3``
    and ``nu`` to one epoch of steps; :meth:`resolve` fills both in.
    """

    t_max: int = None
    epochs: int = None
    delay: int = None
    nu: int = None
    beta: float = 0.1
    alpha: float = 0.1
    exclude_first_layer: bool = False
    exclude_last_layer: bool = False
    start_low_rank: bool = False
    seed: int = 0
    batch_size: int = 64
    lr: float = 1e-3
    min_lr: float = 1e-5
    warmup_lr: float = 1e-5
    warmup_epochs: float = 10
    k_decay: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    label_smoothing: float = 0.0
    snapshot_lag: int = 5
    stability_every: int = 1
    stability_mode: str = "min_rank"
    state_mode: str = "reset"
    track_stability: bool = True

    def validate(self):
        check_fraction(self.beta, "beta")
        check_fraction(self.alpha, "alpha", high_open=False)
        check_fraction(self.label_smoothing, "label_smoothing", low_open=False)
        if (self.t_max is None) == (self.epochs is None):
            raise ConfigError("give exactly one of t_max and epochs")
        for name in ("t_max", "epochs"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1, got {v}")
        if self.nu is not None and self.nu < 1:
            raise ConfigError(f"nu must be >= 1, got {self.nu}")
        if self.delay is not None and self.delay < 0:
            raise ConfigError(f"delay must be >= 0, got {self.delay}")
        if self.batch_size < 1 or self.snapshot_lag < 1 or self.stability_every < 1:
            raise ConfigError("batch_size, snapshot_lag and stability_every must be >= 1")
        if self.stability_mode not in STABILITY_MODES:
            raise ConfigError(f"stability_mode must be one of {STABILITY_MODES}")
        if self.state_mode not in STATE_MODES:
            raise ConfigError(f"state_mode must be one of {STATE_MODES}")
        LrSchedule(self.lr, self.min_lr, self.warmup_lr, self.warmup_epochs, 1, self.k_decay)
        return self

    def resolve(self, n_train):
        """Concrete config for a train split of ``n_train`` samples."""
        self.validate()
        if n_train < 1:
            raise ConfigError("training split is empty")
        spe = math.ceil(n_train / self.batch_size)
        t_max = self.t_max if self.t_max is not None else self.epochs * spe
        delay = t_max // 3 if self.delay is None else self.delay
        if delay > t_max:
            raise ConfigError(f"delay {delay} exceeds t_max {t_max}")
        nu = spe if self.nu is None else self.nu
        return replace(self, t_max=t_max, epochs=math.ceil(t_max / spe), delay=delay, nu=nu)


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    update_index: int = 0
    ell: int = 0
    layers: tuple = ()
    ranks: tuple = ()


@dataclass
class TrainerState:
    t: int = 0
    updates: int = 0
    ell: int = 0
    converted: bool = False


@dataclass
class TrainResult:
    model: object
    optimizer: AdamW
    config: TrainConfig
    telemetry: list = field(default_factory=list)
    events: list = field(default_factory=list)
    stability: list = field(default_factory=list)
    state: TrainerState = None
    baseline_params: tuple = (0, 0)


def layers_per_update(n_layers, alpha, k):
    """Layer count refreshed at the ``k``-th update event (1-based)."""
    # rounding guards float products such as 10 * 0.1 * 3 = 3.0000000000000004
    return min(n_layers, math.ceil(round(n_layers * alpha * k, 9)))


def layer_update_order(model, ell, exclude_first=False, exclude_last=False):
    """The last ``ell`` eligible dense layers, in network order."""
    ids = eligible_layer_ids(model, exclude_first, exclude_last)
    if not 0 <= ell <= len(ids):
        raise ConfigError(f"ell must lie in [0, {len(ids)}], got {ell}")
    return ids[len(ids) - ell :]


def compression_report(model, baseline_param_count):
    """``(compression %, trainable %)`` relative to a full-rank reference.

    ``baseline_param_count`` is either one count (total == trainable, as for a
    plain MLP) or a ``(trainable, total)`` pair.
    """
    if np.ndim(baseline_param_count) == 0:
        base_trainable = base_total = baseline_param_count
    else:
        base_trainable, base_total = baseline_param_count
    if base_trainable <= 0 or base_total <= 0:
        raise ValueError("baseline parameter count must be positive")
    trainable, total = model.param_totals()
    return 100.0 * total / base_total, 100.0 * trainable / base_trainable


def _loss_fn(task, label_smoothing):
    if task == "classification":
        return lambda out, y: cross_entropy_loss(out, y, label_smoothing)
    return mse_loss


def _metric(task, out, y):
    if task == "classification":
        return float(np.mean(np.argmax(out, axis=1) == y))
    d = out - y
    return float(np.mean(d * d))


def evaluate(model, x, y, task, batch_size=1024):
    """``(loss, metric)`` on a split, without label smoothing."""
    if len(x) == 0:
        return None, None
    loss_fn = _loss_fn(task, 0.0)
    tot_loss = tot_metric = 0.0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        out, _ = forward(model, xb)
        loss, _ = loss_fn(out, yb)
        tot_loss += loss * len(xb)
        tot_metric += _metric(task, out, yb) * len(xb)
    return tot_loss / len(x), tot_metric / len(x)


def _update_layers(model, optimizer, cfg, ell):
    """Refresh bases and truncate the last ``ell`` eligible layers."""
    ids = layer_update_order(model, ell, cfg.exclude_first_layer, cfg.exclude_last_layer)
    ranks = []
    for layer_id in ids:
        lrw, rot_u, rot_v = update_basis(model.layer(layer_id).low_rank, return_rotations=True)
        lrw = truncate_rank(lrw, cfg.beta)
        set_low_rank(model, layer_id, lrw)
        optimizer.rank_changed(f"{layer_id}.sigma", lrw.rank, cfg.state_mode, rot_u, rot_v)
        ranks.append(lrw.rank)
    return tuple(ids), tuple(ranks)


def _convert(model, optimizer, cfg):
    full = [f"{i}.weight" for i in eligible_layer_ids(model, cfg.exclude_first_layer, cfg.exclude_last_layer)]
    convert_to_low_rank(model, cfg.exclude_first_layer, cfg.exclude_last_layer)
    optimizer.forget(full)


def train(model, config, dataset, low_rank=True, on_epoch_end=None):
    """Train ``model`` in place on ``dataset`` and return a :class:`TrainResult`.

    Parameters
    ----------
    model : SequentialModel
        Full-rank model; it is modified in place.
    config : TrainConfig
    dataset : Dataset
    low_rank : bool, default=True
        ``False`` gives the plain full-rank baseline with identical batching,
        schedule and telemetry.
    on_epoch_end : callable, optional
        ``on_epoch_end(epoch, result)``; ``epoch`` counts completed epochs and is
        also called with 0 before training starts.
    """
    cfg = config.resolve(dataset.n_train)
    if model.converted:
        raise ConfigError("train expects a full-rank model")
    x, y = dataset.x_train, dataset.y_train
    n = len(x)
    spe = math.ceil(n / cfg.batch_size)
    schedule = LrSchedule(cfg.lr, cfg.min_lr, cfg.warmup_lr, cfg.warmup_epochs, cfg.epochs, cfg.k_decay)
    optimizer = AdamW(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)
    loss_fn = _loss_fn(dataset.task, cfg.label_smoothing)
    n_layers = len(eligible_layer_ids(model, cfg.exclude_first_layer, cfg.exclude_last_layer))
    state = TrainerState()
    result = TrainResult(model, optimizer, cfg, state=state)
    result.baseline_params = model.param_totals()
    tracker = SnapshotTracker(cfg.snapshot_lag, mode=cfg.stability_mode) if cfg.track_stability else None

    delay = cfg.delay
    if low_rank and cfg.start_low_rank:
        _convert(model, optimizer, cfg)
        state.converted = True
        delay = 0
        result.events.append(Event(0, "convert"))

    if tracker is not None:
        tracker.add(take_snapshot(model, 0))
    if on_epoch_end is not None:
        on_epoch_end(0, result)

    for epoch in range(cfg.epochs):
        loss_sum = metric_sum = 0.0
        seen = 0
        lr = cfg.lr
        for b, idx in enumerate(iter_batches(n, cfg.batch_size, cfg.seed, epoch)):
            if state.t >= cfg.t_max:
                break
            state.t += 1
            lr = lr_at(schedule, epoch, b, spe)
            out, cache = forward(model, x[idx])
            if not np.all(np.isfinite(out)):
                raise TrainingDivergedError(f"non-finite outputs at step {state.t}", state.t)
            loss, grad = loss_fn(out, y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss} at step {state.t}", state.t)
            optimizer.step(model, backward(model, cache, grad), lr)
            loss_sum += loss * len(idx)
            metric_sum += _metric(dataset.task, out, y[idx]) * len(idx)
            seen += len(idx)

            t = state.t
            if not low_rank:
                continue
            if not state.converted:
                if t == delay and delay < cfg.t_max:
                    _convert(model, optimizer, cfg)
                    state.converted = True
                    result.events.append(Event(t, "convert"))
                    logger.info("step %d: converted %d layers to low rank", t, n_layers)
            elif t > delay and t % cfg.nu == 0:
                state.updates += 1
                state.ell = layers_per_update(n_layers, cfg.alpha, state.updates)
                ids, ranks = _update_layers(model, optimizer, cfg, state.ell)
                result.events.append(Event(t, "update", state.updates, state.ell, ids, ranks))
                logger.info("step %d: update %d on %s -> ranks %s", t, state.updates, ids, ranks)

        result.telemetry.append(_epoch_row(result, epoch + 1, loss_sum / seen, metric_sum / seen, lr, dataset, tracker))
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, result)
    return result


def _epoch_row(result, epoch, train_loss, train_metric, lr, dataset, tracker):
    model, cfg = result.model, result.config
    val_loss, val_metric = evaluate(model, dataset.x_test, dataset.y_test, dataset.task)
    mean_stab = mean_sim = None
    if tracker is not None and epoch % cfg.stability_every == 0:
        records = tracker.add(take_snapshot(model, epoch))
        result.stability.extend(records)
        for r in records:
            if r.layer_id == MEAN_ID:
                mean_stab, mean_sim = r.stability, r.similarity
    trainable, total = model.param_totals()
    comp, train_pct = compression_report(model, result.baseline_params)
    return TelemetryRow(
        epoch=epoch,
        step=result.state.t,
        train_loss=float(train_loss),
        train_metric=float(train_metric),
        val_loss=val_loss,
        val_metric=val_metric,
        lr=float(lr),
        trainable_params=trainable,
        total_params=total,
        compression_pct=comp,
        trainable_pct=train_pct,
        mean_stability=mean_stab,
        mean_similarity=mean_sim,
        rank_per_layer=tuple(model.ranks()),
    )


def train_baseline(model, config, dataset, on_epoch_end=None):
    """Full-rank training sharing every code path of :func:`train` except the events."""
    return train(model, config, dataset, low_rank=False, on_epoch_end=on_epoch_end)
