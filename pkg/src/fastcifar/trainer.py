"""The training loop, warmup, and repeated-run statistics."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import rng as rng_mod
from .config import Config
from .data import AugmentPolicy, Dataset, batches_per_epoch, make_batches, normalize
from .evaluate import evaluate
from .exceptions import ConfigError
from .initializers import init_whiten_layer
from .model import Network, build
from .ops import softmax_crossentropy
from .optim import (LOOKAHEAD_PERIOD, LookaheadState, lookahead_decay, make_optimizer, total_train_steps,
                    triangle)

log = logging.getLogger(__name__)

LOGGING_COLUMNS = ["run   ", "epoch", "train_loss", "train_acc", "val_acc", "tta_val_acc", "total_time_seconds"]


@dataclass
class RunLog:
    seed: int
    run: int | str
    hyperparams: dict
    rows: list[dict] = field(default_factory=list)
    final: dict | None = None

    @property
    def tta_val_acc(self) -> float:
        return self.final["tta_val_acc"]

    def records(self) -> list[dict]:
        recs = [{"type": "epoch", **r} for r in self.rows]
        recs.append({"type": "final", **self.final})
        return recs

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"run": self.run, "seed": self.seed, **r}) + "\n" for r in self.records())


# ---------------------------------------------------------------------------
# console table
# ---------------------------------------------------------------------------

def format_columns(cells: list[str]) -> str:
    return "".join(f"|  {c}  " for c in cells) + "|"


def format_header() -> str:
    line = format_columns(LOGGING_COLUMNS)
    rule = "-" * len(line)
    return f"{rule}\n{line}\n{rule}"


def format_row(values: dict, is_final: bool = False) -> str:
    cells = []
    for col in LOGGING_COLUMNS:
        v = values.get(col.strip())
        if isinstance(v, bool) or v is None:
            s = ""
        elif isinstance(v, (int, str)):
            s = str(v)
        else:
            s = f"{v:0.4f}"
        cells.append(s.rjust(len(col)))
    line = format_columns(cells)
    return f"{line}\n{'-' * len(line)}" if is_final else line


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _policy(cfg: Config, seed: int) -> AugmentPolicy:
    return AugmentPolicy(flip=cfg.aug.flip, translate_px=cfg.aug.translate, cutout_px=cfg.aug.cutout, seed=seed)


def train(cfg: Config, train_set: Dataset, test_set: Dataset, seed: int = 0, run: int | str = 0,
          on_row: Callable[[dict, bool], None] | None = None,
          clock: Callable[[], float] = time.perf_counter) -> tuple[Network, RunLog]:
    """Run one full training and return the trained network and its log.

    ``total_time_seconds`` accumulates the whitening init, every epoch's
    training section and the final TTA evaluation; per-epoch evaluations are
    not timed.
    """
    hp = cfg.hp
    n_batches = batches_per_epoch(len(train_set), hp.batch_size, drop_last=True)
    if n_batches == 0:
        raise ConfigError(f"batch size {hp.batch_size} exceeds training set size {len(train_set)}")
    total_steps = total_train_steps(n_batches, hp.train_epochs)
    n_epochs = math.ceil(hp.train_epochs)
    policy = _policy(cfg, seed)

    net = build(cfg.net, rng_mod.stream(seed, "init"))
    optimizer = make_optimizer(net, hp)
    lr_schedule = triangle(total_steps, hp.lr_start_frac, hp.lr_end_frac, hp.lr_peak_frac)
    runlog = RunLog(seed=seed, run=run, hyperparams=cfg.to_tree())

    total_time = 0.0
    t0 = clock()
    init_whiten_layer(net, normalize(train_set.images[:cfg.whiten.sample_count]), cfg.whiten)
    total_time += clock() - t0

    state = net.state_dict()
    lookahead = LookaheadState(state)
    whiten_bias = net.whiten.bias
    step = 0
    first_row = True

    for epoch in range(n_epochs):
        whiten_bias.requires_grad = epoch < hp.whiten_bias_epochs
        if not whiten_bias.requires_grad:
            whiten_bias.grad = None

        t0 = clock()
        for inputs, labels in make_batches(train_set, policy, cfg.aug.sampling, hp.batch_size, epoch, drop_last=True):
            outputs = net.forward(inputs, training=True)
            loss, grad = softmax_crossentropy(outputs, labels, hp.label_smoothing)
            net.backward(grad)
            optimizer.step(float(lr_schedule[step]))
            step += 1
            if step % LOOKAHEAD_PERIOD == 0:
                lookahead.update(state, lookahead_decay(step, total_steps))
            if step >= total_steps:
                lookahead.update(state, 1.0)
                break
        total_time += clock() - t0

        val_acc = None
        if cfg.run.epoch_eval == "all" or (cfg.run.epoch_eval == "last" and epoch == n_epochs - 1):
            val_acc = evaluate(net, normalize(test_set.images), test_set.labels, level=0)
        row = {
            "run": run if first_row else None,
            "epoch": epoch,
            "train_loss": loss / len(labels),
            "train_acc": float(np.mean(outputs.argmax(1) == labels)),
            "val_acc": val_acc,
        }
        first_row = False
        runlog.rows.append(row)
        if on_row:
            on_row(row, False)

    t0 = clock()
    tta_val_acc = evaluate(net, normalize(test_set.images), test_set.labels, level=hp.tta_level)
    total_time += clock() - t0

    runlog.final = {"epoch": "eval", "tta_val_acc": tta_val_acc, "total_time_seconds": total_time}
    if on_row:
        on_row(runlog.final, True)
    return net, runlog


def warmup(cfg: Config, train_set: Dataset, test_set: Dataset, seed: int = 0) -> RunLog:
    """One throwaway run on uniformly random labels, so later timed runs skip one-time costs."""
    labels = rng_mod.stream(seed, "warmup-labels").integers(0, cfg.net.n_classes, size=len(train_set))
    _, runlog = train(cfg, train_set.with_labels(labels), test_set, seed=seed, run="warmup")
    return runlog


# ---------------------------------------------------------------------------
# repeated runs
# ---------------------------------------------------------------------------

@dataclass
class RunStats:
    accs: list[float]
    mean: float
    std: float | None
    ci95: float | None

    @classmethod
    def from_accs(cls, accs) -> "RunStats":
        a = np.asarray(accs, dtype=np.float64)
        if len(a) == 0:
            raise ValueError("no runs to summarize")
        std = float(a.std(ddof=1)) if len(a) > 1 else None
        ci = 1.96 * std / math.sqrt(len(a)) if std is not None else None
        return cls([float(x) for x in a], float(a.mean()), std, ci)

    def to_dict(self) -> dict:
        return asdict(self) | {"n": len(self.accs)}


def _train_worker(args):
    cfg, train_set, test_set, seed, run = args
    _, runlog = train(cfg, train_set, test_set, seed=seed, run=run)
    return runlog


def run_many(cfg: Config, train_set: Dataset, test_set: Dataset, n_runs: int | None = None,
             seeds: list[int] | None = None, jobs: int = 1,
             on_row: Callable[[dict, bool], None] | None = None) -> tuple[RunStats, list[RunLog]]:
    """Independent trainings with distinct seeds; summarizes the final TTA accuracies."""
    n = n_runs if n_runs is not None else cfg.run.n_runs
    if n < 1:
        raise ValueError(f"n_runs must be >= 1, got {n}")
    seeds = list(seeds) if seeds is not None else [cfg.run.seed + i for i in range(n)]
    if len(seeds) != n or len(set(seeds)) != n:
        raise ValueError("need exactly n_runs distinct seeds")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            logs = list(pool.map(_train_worker, [(cfg, train_set, test_set, s, i) for i, s in enumerate(seeds)]))
        if on_row:
            for lg in logs:
                for r in lg.rows:
                    on_row(r, False)
                on_row(lg.final, True)
    else:
        logs = [train(cfg, train_set, test_set, seed=s, run=i, on_row=on_row)[1] for i, s in enumerate(seeds)]
    return RunStats.from_accs([lg.tta_val_acc for lg in logs]), logs
