"""Network builders for the airbench94/95/96 presets."""
from __future__ import annotations

import copy
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import archive
from .exceptions import ConfigError, ShapeError
from .initializers import default_uniform, dirac_init
from .layers import (GELU, BatchNorm2d, Conv2d, Flatten, Layer, Linear, MaxPool2d, Param,
                     Residual, Scale, Sequential)

WHITEN_KERNEL = 2


@dataclass(frozen=True)
class NetConfig:
    widths: tuple[int, int, int] = (64, 256, 256)
    convs_per_block: int = 2
    residual: bool = False
    output_scale: float = 1 / 9
    bn_retention: float = 0.6
    bn_eps: float = 1e-12
    n_classes: int = 10

    @property
    def whiten_width(self) -> int:
        return 2 * 3 * WHITEN_KERNEL ** 2

    def __post_init__(self):
        if len(self.widths) != 3 or any(int(w) <= 0 for w in self.widths):
            raise ConfigError(f"widths must be three positive ints, got {self.widths}")
        if self.convs_per_block not in (2, 3):
            raise ConfigError(f"convs_per_block must be 2 or 3, got {self.convs_per_block}")
        if self.residual and self.convs_per_block != 3:
            raise ConfigError("the residual connection spans the second and third convs; needs convs_per_block=3")
        if not 0 < self.bn_retention < 1:
            raise ConfigError(f"bn_retention must lie in (0, 1), got {self.bn_retention}")

    def scaled(self, factor: float) -> "NetConfig":
        return replace(self, widths=tuple(max(1, round(w * factor)) for w in self.widths))


PRESETS = {
    "airbench94": NetConfig(widths=(64, 256, 256)),
    "airbench95": NetConfig(widths=(128, 384, 384)),
    "airbench96": NetConfig(widths=(128, 512, 512), convs_per_block=3, residual=True),
}


def _conv(rng, cin, cout) -> Conv2d:
    w = default_uniform(rng, (cout, cin, 3, 3))
    dirac_init(w[:cin])
    return Conv2d(w, padding="same")


def _block(rng, cin, cout, cfg: NetConfig) -> Sequential:
    bn = lambda: BatchNorm2d(cout, cfg.bn_retention, cfg.bn_eps)
    head = [("conv1", _conv(rng, cin, cout)), (None, MaxPool2d(2)), ("norm1", bn()), (None, GELU()),
            ("conv2", _conv(rng, cout, cout)), ("norm2", bn()), (None, GELU())]
    if cfg.convs_per_block == 2:
        return Sequential(head)
    tail = [("conv3", _conv(rng, cout, cout)), ("norm3", bn()), (None, GELU())]
    if cfg.residual:
        return Sequential(head[:4] + [(None, Residual(Sequential(head[4:] + tail)))])
    return Sequential(head + tail)


class Network:
    """The layer graph plus its parameter registry.

    Parameter names are stable and double as checkpoint keys:
    ``whiten.weight``, ``block2.conv1.weight``, ``block1.norm2.bias``, ``head.weight`` ...
    """

    def __init__(self, config: NetConfig, body: Sequential):
        self.config = config
        self.body = body

    @property
    def whiten(self) -> Conv2d:
        return self.body["whiten"]

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N×3×H×W input, got {x.shape}")
        return self.body.forward(x, training)

    __call__ = forward

    def backward(self, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate ``d loss / d logits``; fills ``Param.grad`` and returns the trainable grads."""
        self.body.backward(loss_grad, need_input=False)
        return {k: p.grad for k, p in self.named_parameters() if p.requires_grad}

    def named_parameters(self) -> list[tuple[str, Param]]:
        return list(self.body.named_params())

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return list(self.body.named_buffers())

    def param_groups(self) -> dict[str, list[tuple[str, Param]]]:
        groups: dict[str, list] = {"norm_bias": [], "other": []}
        for name, p in self.named_parameters():
            if name == "whiten.weight" or p.group == "frozen":
                continue
            groups["norm_bias" if p.group == "norm_bias" else "other"].append((name, p))
        return groups

    def param_count(self) -> int:
        return sum(p.value.size for _, p in self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        """Live references to every float parameter and running statistic."""
        state = {k: p.value for k, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for k, v in state.items():
            if own[k].shape != v.shape:
                raise ShapeError(f"{k}: expected {own[k].shape}, got {v.shape}")
            own[k][...] = v

    def save(self, path: str | os.PathLike) -> None:
        archive.save(path, self.state_dict())

    def load(self, path: str | os.PathLike) -> None:
        self.load_state_dict(archive.load(path))

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def build(config: NetConfig, rng: np.random.Generator) -> Network:
    w1, w2, w3 = config.widths
    ww = config.whiten_width
    whiten_w = default_uniform(rng, (ww, 3, WHITEN_KERNEL, WHITEN_KERNEL))
    whiten = Conv2d(whiten_w, np.zeros(ww, np.float32), padding="none")
    whiten.weight.requires_grad = False
    body = Sequential([
        ("whiten", whiten), (None, GELU()),
        ("block1", _block(rng, ww, w1, config)),
        ("block2", _block(rng, w1, w2, config)),
        ("block3", _block(rng, w2, w3, config)),
        (None, MaxPool2d(3)), (None, Flatten()),
        ("head", Linear(default_uniform(rng, (config.n_classes, w3)))),
        (None, Scale(config.output_scale)),
    ])
    return Network(config, body)


# ---------------------------------------------------------------------------
# shape and cost accounting
# ---------------------------------------------------------------------------

def feature_sizes(image_size: int = 32) -> list[int]:
    """Spatial size after the whitening conv and after each block's pool."""
    s = image_size - WHITEN_KERNEL + 1
    sizes = [s]
    for _ in range(3):
        s //= 2
        sizes.append(s)
    return sizes


def param_count_formula(config: NetConfig) -> int:
    """Parameter total from shape arithmetic alone (BN scales included, as frameworks count them)."""
    ww = config.whiten_width
    total = ww * 3 * WHITEN_KERNEL ** 2 + ww
    cin = ww
    for w in config.widths:
        total += 9 * cin * w + 9 * w * w * (config.convs_per_block - 1)
        total += 2 * w * config.convs_per_block
        cin = w
    return total + config.n_classes * config.widths[2]


def forward_macs(config: NetConfig, image_size: int = 32) -> int:
    """Multiply-accumulates for one image's forward pass (convs and linear only)."""
    s0, s1, s2, s3 = feature_sizes(image_size)
    ww = config.whiten_width
    macs = s0 * s0 * ww * 3 * WHITEN_KERNEL ** 2
    cin, s_in = ww, s0
    for w, s_out in zip(config.widths, (s1, s2, s3)):
        macs += s_in * s_in * w * cin * 9
        macs += (config.convs_per_block - 1) * s_out * s_out * w * w * 9
        cin, s_in = w, s_out
    return macs + config.widths[2] * config.n_classes


def training_flops(config: NetConfig, epochs: float, batch_size: int = 1024, n_train: int = 50_000) -> float:
    """2 FLOPs per MAC, backward costed at twice the forward, over all training steps."""
    steps = math.ceil((n_train // batch_size) * epochs)
    return 3 * 2 * forward_macs(config) * batch_size * steps
