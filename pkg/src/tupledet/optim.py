"""SGD with heavy-ball momentum and a linear warmup schedule.

Update rule per step: v <- momentum * v - lr * grad; theta <- theta + v.
The learning rate ramps linearly from 0 at step 0 to base_lr at
warmup_steps, then stays flat. Steps are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .mlp import MlpGrads, MlpParams


@dataclass
class LrSchedule:
    base_lr: float
    warmup_steps: int = 0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")


@dataclass
class OptimizerState:
    """Velocity buffers mirroring one MlpParams, plus the shared step counter."""

    velocity_w: list[np.ndarray]
    velocity_b: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams, step_count: int = 0) -> "OptimizerState":
        return cls([np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases], step_count)


def lr_at_step(sched: LrSchedule, step: int) -> float:
    """Learning rate at a 1-based step: base_lr * min(1, step / warmup_steps)."""
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    if sched.warmup_steps == 0:
        return sched.base_lr
    return sched.base_lr * min(1.0, step / sched.warmup_steps)


def sgd_momentum_step(params: MlpParams, grads: MlpGrads, state: OptimizerState,
                      sched: LrSchedule, momentum: float) -> tuple[MlpParams, OptimizerState]:
    """One heavy-ball update. Pure: returns new params and state, inputs untouched."""
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    if len(grads.weights) != len(params.weights):
        raise ShapeError("gradient layer count does not match parameters")
    for w, gw in zip(params.weights, grads.weights):
        if w.shape != gw.shape:
            raise ShapeError(f"weight grad shape {gw.shape} != param shape {w.shape}")
    step = state.step_count + 1
    lr = lr_at_step(sched, step)
    new_vw, new_w = [], []
    for w, gw, vw in zip(params.weights, grads.weights, state.velocity_w):
        v = momentum * vw - lr * gw
        new_vw.append(v)
        new_w.append(w + v)
    new_vb, new_b = [], []
    for b, gb, vb in zip(params.biases, grads.biases, state.velocity_b):
        v = momentum * vb - lr * gb
        new_vb.append(v)
        new_b.append(b + v)
    return (MlpParams(new_w, new_b, params.activation),
            OptimizerState(new_vw, new_vb, step))
