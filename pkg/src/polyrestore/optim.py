"""Adam optimizer and the linear learning-rate decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OptimizerConfig:
    alpha: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("momentum decay rates must lie in [0, 1)")
        if self.alpha < 0:
            raise ValueError("learning rate must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], t=0)


def adam_step(params, grads, state: AdamState, config: OptimizerConfig, t=None, lr=None):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` are aligned lists of numpy arrays; a ``None``
    gradient means that parameter received no signal and keeps moving only on
    its accumulated momentum. ``lr`` overrides config.alpha when a schedule
    drives the rate. Returns the updated params list.
    """
    if len(params) != len(grads):
        raise ValueError(f"adam_step: {len(params)} params vs {len(grads)} grads")
    if t is None:
        state.t += 1
        t = state.t
    else:
        if t < 1:
            raise ValueError(f"adam_step: step index must be >= 1, got {t}")
        state.t = t
    alpha = config.alpha if lr is None else lr
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= alpha * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


@dataclass(frozen=True)
class LrSchedule:
    """Constant rate for the first ``hold_epochs`` epochs, then linear decay
    to zero at ``total_epochs``."""

    alpha0: float = 2e-4
    hold_epochs: int = 100
    total_epochs: int = 2000

    def __post_init__(self):
        if self.total_epochs < self.hold_epochs:
            raise ValueError("total_epochs must be >= hold_epochs")


def lr_at(schedule: LrSchedule, epoch):
    """Learning rate for a zero-based epoch index; non-increasing, continuous
    at the hold boundary, and exactly zero at total_epochs."""
    if epoch < schedule.hold_epochs:
        return schedule.alpha0
    span = schedule.total_epochs - schedule.hold_epochs
    if span == 0 or epoch >= schedule.total_epochs:
        return 0.0
    return schedule.alpha0 * (schedule.total_epochs - epoch) / span
