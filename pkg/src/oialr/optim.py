"""AdamW with per-tensor state and a warmup + cosine (k-decay) LR schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ShapeError

STATE_MODES = ("reset", "slice")


@dataclass
class AdamWState:
    """First/second moments and step count for one tensor."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, p):
        return cls(np.zeros_like(p), np.zeros_like(p), 0)


def adamw_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One in-place AdamW update of ``param``; mutates and returns ``state``.

    Decoupled decay ``p -= lr * wd * p`` runs before the bias-corrected Adam
    update.
    """
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeError(f"param {param.shape}, grad {grad.shape} and state {state.m.shape} must match")
    state.t += 1
    if weight_decay:
        param -= lr * weight_decay * param
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def reshape_states_on_rank_change(state, new_rank, mode="reset", rot_u=None, rot_v=None):
    """Adapt a sigma tensor's moments after a basis update and truncation.

    ``reset`` (default) zeros both moments and the step count: they were
    accumulated in the pre-rotation coordinates. ``slice`` keeps the leading
    ``new_rank x new_rank`` block instead. The rotations are accepted for
    interface symmetry but neither mode uses them.
    """
    if mode == "reset":
        return AdamWState(np.zeros((new_rank, new_rank)), np.zeros((new_rank, new_rank)), 0)
    if mode == "slice":
        return AdamWState(state.m[:new_rank, :new_rank].copy(), state.v[:new_rank, :new_rank].copy(), state.t)
    raise ConfigError(f"unknown optimizer state mode {mode!r}; expected one of {STATE_MODES}")


@dataclass
class AdamW:
    """Holds per-tensor :class:`AdamWState` keyed by parameter name."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    state: dict = field(default_factory=dict)

    def step(self, model, grads, lr):
        trainable = model.trainable_parameters()
        frozen = model.frozen_parameters()
        for name, g in grads.items():
            if name in frozen:
                raise RuntimeError(f"frozen tensor {name} passed to the optimizer")
            p = trainable[name]
            st = self.state.get(name)
            if st is None or st.m.shape != p.shape:
                st = self.state[name] = AdamWState.zeros_like(p)
            wd = 0.0 if name.endswith(".bias") else self.weight_decay
            adamw_step(p, g, st, lr, self.beta1, self.beta2, self.eps, wd)
        model.touch()

    def forget(self, names):
        for n in names:
            self.state.pop(n, None)

    def rank_changed(self, name, new_rank, mode="reset", rot_u=None, rot_v=None):
        st = self.state.get(name)
        if st is None:
            return
        self.state[name] = reshape_states_on_rank_change(st, new_rank, mode, rot_u, rot_v)


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup then cosine decay with exponent ``k_decay`` on progress."""

    base_lr: float = 1e-3
    min_lr: float = 1e-5
    warmup_lr: float = 1e-5
    warmup_epochs: float = 10
    total_epochs: int = 100
    k_decay: float = 1.0

    def __post_init__(self):
        if self.warmup_lr > self.base_lr or self.min_lr > self.base_lr:
            raise ConfigError("warmup_lr and min_lr must not exceed base_lr")
        if self.total_epochs < 1 or self.warmup_epochs < 0 or self.k_decay <= 0:
            raise ConfigError("need total_epochs >= 1, warmup_epochs >= 0, k_decay > 0")


def lr_at(schedule, epoch, step_within_epoch, steps_per_epoch):
    """Learning rate at a given step.

    Warmup ramps linearly (per step) from ``warmup_lr`` to ``base_lr``; after it
    ``lr = min_lr + (base_lr - min_lr) * (1 + cos(pi * tau**k)) / 2`` with
    ``tau`` running from 0 at the end of warmup to 1 at the final step.
    """
    s = schedule
    step = epoch * steps_per_epoch + step_within_epoch
    warm = s.warmup_epochs * steps_per_epoch
    last = s.total_epochs * steps_per_epoch - 1
    if step < warm:
        return s.warmup_lr + (s.base_lr - s.warmup_lr) * step / warm
    span = last - warm
    tau = 1.0 if span <= 0 else min(1.0, (step - warm) / span)
    return s.min_lr + (s.base_lr - s.min_lr) * (1.0 + math.cos(math.pi * tau**s.k_decay)) / 2.0
