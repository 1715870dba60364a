"""Adam and the epoch-level warmup + step-decay learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OutOfRange, ShapeMismatch

DEFAULT_DECAYS = ((80, 1e-4), (100, 1e-5))


@dataclass(frozen=True)
class LrSchedule:
    """Linear ramp from ``warmup_start_lr`` to ``base_lr`` over ``warmup_epochs``,
    then piecewise constant with a step at each ``(epoch, lr)`` decay point.

    Defaults: 20 warmup epochs from 5e-5 to 1e-3, decays to 1e-4 at epoch 80
    and 1e-5 at epoch 100, 140 epochs in total.
    """

    warmup_start_lr: float = 5e-5
    base_lr: float = 1e-3
    warmup_epochs: int = 20
    decay_points: tuple = DEFAULT_DECAYS
    total_epochs: int = 140

    def __post_init__(self):
        object.__setattr__(
            self, "decay_points", tuple((int(e), float(lr)) for e, lr in self.decay_points)
        )
        if self.total_epochs < 1 or self.warmup_epochs < 0:
            raise ConfigError("total_epochs must be >= 1 and warmup_epochs >= 0")
        if self.base_lr < 0 or self.warmup_start_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.warmup_start_lr > self.base_lr:
            raise ConfigError("warmup_start_lr must not exceed base_lr")
        prev_epoch, prev_lr = self.warmup_epochs - 1, self.base_lr
        for epoch, lr in self.decay_points:
            if epoch <= prev_epoch or lr >= prev_lr or lr < 0:
                raise ConfigError(
                    "decay points must follow warmup with strictly increasing epochs "
                    "and strictly decreasing rates"
                )
            prev_epoch, prev_lr = epoch, lr


def lr_at(schedule, epoch):
    if not 0 <= epoch < schedule.total_epochs:
        raise OutOfRange(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    if epoch < schedule.warmup_epochs:
        t = epoch / schedule.warmup_epochs
        return schedule.warmup_start_lr + t * (schedule.base_lr - schedule.warmup_start_lr)
    lr = schedule.base_lr
    for start, decayed in schedule.decay_points:
        if epoch >= start:
            lr = decayed
    return lr


def constant_schedule(base_lr=1e-3, decay_points=DEFAULT_DECAYS, total_epochs=140):
    """The no-warmup ablation: same decays, full rate from epoch 0."""
    return LrSchedule(
        warmup_start_lr=base_lr,
        base_lr=base_lr,
        warmup_epochs=0,
        decay_points=decay_points,
        total_epochs=total_epochs,
    )


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state, params, grads, lr):
    """Bias-corrected Adam update, applied to ``params`` in place.

    Accumulators are created on the first call and tied to the order of
    ``params`` from then on.
    """
    params, grads = list(params), list(grads)
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatch("parameter list changed since the optimizer state was created")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape}, gradient {np.shape(g)}, state {m.shape}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
