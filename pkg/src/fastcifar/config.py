"""Run configuration: a JSON tree with ``opt`` / ``aug`` / ``net`` / ``run`` sections.

Key names follow the original ``hyp`` dictionary where one exists. Unknown keys
are rejected so that typos fail loudly.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any

from .data import FLIP_POLICIES, SAMPLING_MODES
from .exceptions import ConfigError
from .initializers import WhitenConfig
from .model import NetConfig
from .optim import HyperParams


@dataclass(frozen=True)
class AugConfig:
    flip: str = "alternating"
    translate: int = 2
    cutout: int = 0
    sampling: str = "random_reshuffle"

    def __post_init__(self):
        if self.flip not in FLIP_POLICIES:
            raise ConfigError(f"aug.flip must be one of {FLIP_POLICIES}, got {self.flip!r}")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError(f"aug.sampling must be one of {SAMPLING_MODES}, got {self.sampling!r}")
        if not 0 <= self.translate < 16 or not 0 <= self.cutout <= 32:
            raise ConfigError("aug.translate must lie in [0, 16) and aug.cutout in [0, 32]")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n_runs: int = 25
    data: str | None = None
    out: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None
    warmup: bool = True
    jobs: int = 1
    epoch_eval: str = "all"

    def __post_init__(self):
        if self.n_runs < 1 or self.jobs < 1:
            raise ConfigError("run.n_runs and run.jobs must be >= 1")
        if self.epoch_eval not in ("all", "last", "none"):
            raise ConfigError(f"run.epoch_eval must be 'all', 'last' or 'none', got {self.epoch_eval!r}")


@dataclass(frozen=True)
class Config:
    hp: HyperParams = field(default_factory=HyperParams)
    net: NetConfig = field(default_factory=NetConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    whiten: WhitenConfig = field(default_factory=WhitenConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # -- tree form ---------------------------------------------------------

    def to_tree(self) -> dict[str, Any]:
        hp = self.hp
        return {
            "opt": {
                "train_epochs": hp.train_epochs,
                "batch_size": hp.batch_size,
                "lr": hp.lr,
                "momentum": hp.momentum,
                "weight_decay": hp.weight_decay,
                "bias_scaler": hp.bias_scaler,
                "label_smoothing": hp.label_smoothing,
                "whiten_bias_epochs": hp.whiten_bias_epochs,
                "lr_start_frac": hp.lr_start_frac,
                "lr_end_frac": hp.lr_end_frac,
                "lr_peak_frac": hp.lr_peak_frac,
            },
            "aug": asdict(self.aug),
            "net": {
                "widths": dict(zip(("block1", "block2", "block3"), self.net.widths)),
                "convs_per_block": self.net.convs_per_block,
                "residual": self.net.residual,
                "batchnorm_momentum": self.net.bn_retention,
                "scaling_factor": self.net.output_scale,
                "num_classes": self.net.n_classes,
                "tta_level": hp.tta_level,
                "whiten_eps": self.whiten.eps,
                "whiten_samples": self.whiten.sample_count,
            },
            "run": asdict(self.run),
        }

    @classmethod
    def from_tree(cls, tree: dict[str, Any], base: "Config | None" = None) -> "Config":
        """Build a config from a (possibly partial) tree layered over ``base``."""
        base = base or cls()
        merged = _merge(base.to_tree(), tree, "")
        opt, aug, net, run = merged["opt"], merged["aug"], merged["net"], merged["run"]
        try:
            flip = aug["flip"]
            if flip is True:
                flip = "alternating"
            elif flip is False:
                flip = "none"
            hp = HyperParams(tta_level=int(net["tta_level"]), **opt)
            netcfg = NetConfig(
                widths=tuple(int(net["widths"][k]) for k in ("block1", "block2", "block3")),
                convs_per_block=int(net["convs_per_block"]), residual=bool(net["residual"]),
                output_scale=float(net["scaling_factor"]), bn_retention=float(net["batchnorm_momentum"]),
                n_classes=int(net["num_classes"]))
            whiten = WhitenConfig(eps=float(net["whiten_eps"]), sample_count=int(net["whiten_samples"]))
            return cls(hp, netcfg, AugConfig(**{**aug, "flip": flip}), whiten, RunConfig(**run))
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def dumps(self) -> str:
        return json.dumps(self.to_tree(), indent=2)

    def with_overrides(self, **sections) -> "Config":
        return replace(self, **sections)


def _merge(base: dict, update: dict, path: str) -> dict:
    if not isinstance(update, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    out = dict(base)
    for k, v in update.items():
        key = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"Unrecognized key: {key}")
        if isinstance(base[k], dict):
            out[k] = _merge(base[k], v, key)
        else:
            out[k] = v
    return out


def preset(name: str) -> Config:
    """The airbench94/95/96 configurations."""
    if name == "airbench94":
        return Config()
    if name == "airbench95":
        return Config(hp=HyperParams(train_epochs=15, lr=11.5 * 0.87),
                      net=NetConfig(widths=(128, 384, 384)))
    if name == "airbench96":
        return Config(hp=HyperParams(train_epochs=40, lr=11.5 * 0.78),
                      net=NetConfig(widths=(128, 512, 512), convs_per_block=3, residual=True),
                      aug=AugConfig(cutout=12))
    raise ConfigError(f"unknown preset {name!r}; choose airbench94, airbench95 or airbench96")


def load(path: str | os.PathLike, base: Config | None = None) -> Config:
    try:
        with open(path) as f:
            tree = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    return Config.from_tree(tree, base)
