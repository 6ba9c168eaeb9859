"""Decoupled Nesterov SGD, the triangular schedule, and Lookahead.

Hyperparameters are given in "decoupled" form: the learning rate and weight
decay are per 1024 examples, and the learning rate is divided by the Nesterov
gain ``1 + 1/(1 - momentum)`` so that, for a constant gradient, the long-run
step size does not depend on the momentum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, StateError

LOOKAHEAD_PERIOD = 5
LOOKAHEAD_BASE = 0.95 ** 5


@dataclass(frozen=True)
class HyperParams:
    lr: float = 11.5
    momentum: float = 0.85
    weight_decay: float = 0.0153
    bias_scaler: float = 64.0
    label_smoothing: float = 0.2
    batch_size: int = 1024
    train_epochs: float = 9.9
    whiten_bias_epochs: int = 3
    tta_level: int = 2
    lr_start_frac: float = 0.2
    lr_end_frac: float = 0.07
    lr_peak_frac: float = 0.23

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        for name in ("lr", "batch_size", "train_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0 or self.bias_scaler <= 0:
            raise ConfigError("weight_decay must be >= 0 and bias_scaler > 0")
        if not 0 < self.lr_peak_frac < 1:
            raise ConfigError(f"lr_peak_frac must lie in (0, 1), got {self.lr_peak_frac}")
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.tta_level not in (0, 1, 2):
            raise ConfigError(f"tta_level must be 0, 1 or 2, got {self.tta_level}")


@dataclass(frozen=True)
class Decoupled:
    lr_step: float
    lr_bias_step: float
    decay_other: float
    decay_bias: float

    @property
    def wd_step(self) -> float:
        return self.decay_other * self.lr_step


def kilostep_scale(momentum: float) -> float:
    if not momentum < 1:
        raise ValueError(f"momentum must be < 1, got {momentum}")
    return 1024 * (1 + 1 / (1 - momentum))


def decouple(hp: HyperParams) -> Decoupled:
    """Convert decoupled hyperparameters into per-group SGD learning rates and decay coefficients."""
    scale = kilostep_scale(hp.momentum)
    lr = hp.lr / scale
    lr_bias = lr * hp.bias_scaler
    wd = hp.weight_decay * hp.batch_size / scale
    return Decoupled(lr_step=lr, lr_bias_step=lr_bias, decay_other=wd / lr, decay_bias=wd / lr_bias)


def triangle(total_steps: int, start: float = 0.0, end: float = 0.0, peak: float = 0.5) -> np.ndarray:
    """Piecewise-linear schedule through (0, start), (floor(peak*T), 1), (T, end), at steps 0..T."""
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 < peak < 1:
        raise ValueError(f"peak must lie in (0, 1), got {peak}")
    xp = [0, int(peak * total_steps), total_steps]
    return np.interp(np.arange(total_steps + 1), xp, [start, 1.0, end])


def lookahead_decay(step: int, total: int) -> float:
    return LOOKAHEAD_BASE * (step / total) ** 3


@dataclass
class ParamGroup:
    params: list  # list of layers.Param
    lr: float
    weight_decay: float


class NesterovSGD:
    """SGD with Nesterov momentum; decay is folded into the gradient before the momentum buffer.

    ``step(lr_scale)`` applies, for each parameter with a gradient::

        g = grad + wd * w;  buf = m * buf + g;  w -= lr * lr_scale * (g + m * buf)
    """

    def __init__(self, groups: list[ParamGroup], momentum: float):
        self.groups = groups
        self.momentum = momentum
        self.buffers: dict[int, np.ndarray] = {}

    def step(self, lr_scale: float = 1.0) -> None:
        m = self.momentum
        for group in self.groups:
            lr = group.lr * lr_scale
            for p in group.params:
                if not p.requires_grad:
                    continue
                if p.grad is None:
                    raise StateError("trainable parameter has no gradient; run backward before step")
                dt = p.value.dtype.type
                g = p.grad + dt(group.weight_decay) * p.value
                buf = self.buffers.get(id(p))
                if buf is None:
                    buf = self.buffers[id(p)] = np.zeros_like(p.value)
                buf *= dt(m)
                buf += g
                g += dt(m) * buf
                p.value -= dt(lr) * g

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.grad = None


def sgd_step(params, grads, buffers, lr: float, momentum: float, weight_decay: float) -> None:
    """One Nesterov step over bare arrays, updating ``params`` and ``buffers`` in place."""
    for w, g0, buf in zip(params, grads, buffers):
        if g0 is None:
            raise StateError("missing gradient")
        g = g0 + weight_decay * w
        buf *= momentum
        buf += g
        w -= lr * (g + momentum * buf)


def make_optimizer(net, hp: HyperParams) -> NesterovSGD:
    d = decouple(hp)
    groups = net.param_groups()
    return NesterovSGD([
        ParamGroup([p for _, p in groups["norm_bias"]], d.lr_bias_step, d.decay_bias),
        ParamGroup([p for _, p in groups["other"]], d.lr_step, d.decay_other),
    ], hp.momentum)


class LookaheadState:
    """Exponential moving average of every parameter and running statistic."""

    def __init__(self, state: dict[str, np.ndarray]):
        self.ema = {k: v.copy() for k, v in state.items()}

    def update(self, state: dict[str, np.ndarray], decay: float) -> None:
        """``ema = decay*ema + (1-decay)*param`` then ``param = ema``, in place."""
        w = 1.0 - decay
        for k, ema in self.ema.items():
            live = state[k]
            # two-sided lerp: exact at both ends (w == 0 keeps ema, w == 1 copies live)
            if w < 0.5:
                ema += ema.dtype.type(w) * (live - ema)
            else:
                ema[...] = live - ema.dtype.type(1.0 - w) * (live - ema)
            live[...] = ema


def lookahead_update(state: LookaheadState, net_state: dict[str, np.ndarray], step: int, total: int,
                     final: bool = False) -> float:
    decay = 1.0 if final else lookahead_decay(step, total)
    state.update(net_state, decay)
    return decay


def total_train_steps(batches_per_epoch: int, epochs: float) -> int:
    return math.ceil(batches_per_epoch * epochs)
