"""Coverage arithmetic for flip and sampling policies, power-law fits, and run comparisons.

Errors are in percentage points throughout.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, replace
from typing import Iterable, TextIO

import numpy as np
from scipy import stats

from . import rng as rng_mod
from .data import FLIP_POLICIES, SAMPLING_MODES, AugmentPolicy, epoch_indices, flip_mask
from .exceptions import FormatError, NumericalError, UnattainableError

A_BOUNDS = (-3.0, -0.01)
_GOLDEN = (math.sqrt(5) - 1) / 2


# ---------------------------------------------------------------------------
# coverage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageReport:
    n: int
    window_epochs: int
    trials: int
    unique_pairs: float  # mean over trials and windows
    min_unique: int
    max_unique: int
    expected_unique: float

    @property
    def fraction(self) -> float:
        return self.unique_pairs / self.n


def expected_coverage(flip: str, sampling: str, n: int, window: int) -> float:
    """Closed-form expected number of distinct (index, orientation) pairs in ``window`` epochs."""
    if window < 1 or n < 1:
        raise ValueError("window and n must be >= 1")
    if sampling in ("random_reshuffle", "sequential"):
        if flip == "none":
            return float(n)
        if flip == "alternating":
            return float(n * min(window, 2))
        return n * (2 - 2.0 ** (1 - window))
    if sampling != "with_replacement":
        raise ValueError(f"unknown sampling mode {sampling!r}")
    # an index appears in a given epoch with probability q
    q = -math.expm1(n * math.log1p(-1 / n)) if n > 1 else 1.0
    if flip == "none":
        return n * -math.expm1(n * window * math.log1p(-1 / n)) if n > 1 else 1.0
    if flip == "random":
        return 2 * n * (1 - (1 - q / 2) ** window)
    odd, even = math.ceil(window / 2), window // 2
    return n * ((1 - (1 - q) ** odd) + (1 - (1 - q) ** even))


def _epoch_pairs(policy: AugmentPolicy, sampling: str, n: int, epoch: int) -> np.ndarray:
    idx = epoch_indices(sampling, n, epoch, policy.seed)
    flips = flip_mask(policy, idx, epoch, n_total=n)
    seen = np.zeros(2 * n, dtype=bool)
    seen[2 * idx + flips] = True
    return seen


def coverage(flip: str, sampling: str, n: int, window: int, trials: int = 1, seed: int = 0,
             span: int | None = None) -> CoverageReport:
    """Simulate index and flip streams and count distinct pairs per sliding window.

    Each trial simulates ``span`` epochs (default ``window + 2``) and counts the
    distinct (index, orientation) pairs in every window of ``window``
    consecutive epochs.
    """
    if flip not in FLIP_POLICIES or sampling not in SAMPLING_MODES:
        raise ValueError(f"unknown flip {flip!r} or sampling {sampling!r}")
    if min(n, window, trials) < 1:
        raise ValueError("n, window and trials must be >= 1")
    span = window + 2 if span is None else span
    if span < window:
        raise ValueError("span must cover at least one window")
    counts = []
    for t in range(trials):
        trial_seed = int(rng_mod.stream(seed, "coverage", t).integers(2 ** 62))
        policy = AugmentPolicy(flip=flip, translate_px=0, seed=trial_seed)
        seen = [_epoch_pairs(policy, sampling, n, e) for e in range(span)]
        for start in range(span - window + 1):
            counts.append(int(np.logical_or.reduce(seen[start:start + window]).sum()))
    counts = np.array(counts)
    return CoverageReport(n=n, window_epochs=window, trials=trials, unique_pairs=float(counts.mean()),
                          min_unique=int(counts.min()), max_unique=int(counts.max()),
                          expected_unique=expected_coverage(flip, sampling, n, window))


# ---------------------------------------------------------------------------
# power-law fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b: float
    c: float
    residual: float

    def predict(self, epochs) -> np.ndarray | float:
        e = np.asarray(epochs, dtype=np.float64)
        if np.any(e <= 0):
            raise ValueError("epochs must be positive")
        out = self.c + self.b * e ** self.a
        return float(out) if out.ndim == 0 else out


def _solve_bc(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares (b, c) for ``y ≈ b*x + c`` with ``c >= 0``; returns (b, c, sse)."""
    design = np.stack([x, np.ones_like(x)], axis=1)
    (b, c), *_ = np.linalg.lstsq(design, y, rcond=None)
    if c < 0:
        c = 0.0
        b = float(x @ y / (x @ x))
    r = b * x + c - y
    return float(b), float(c), float(r @ r)


def fit_power_law(points: Iterable[tuple[float, float]], bounds: tuple[float, float] = A_BOUNDS,
                  tol: float = 1e-10) -> PowerLawFit:
    """Least-squares fit of ``error = c + b * epochs**a``.

    ``a`` is found by a coarse grid scan followed by golden-section search on
    the bracketing cell; ``(b, c)`` are solved in closed form for each ``a``.
    """
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (epochs, error) pairs")
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points to fit 3 parameters, got {len(pts)}")
    e, y = pts[:, 0], pts[:, 1]
    if np.any(e <= 0) or len(np.unique(e)) != len(e):
        raise ValueError("epochs must be positive and distinct")
    if not np.all(np.isfinite(pts)):
        raise NumericalError("non-finite point in fit input")

    def sse(a):
        return _solve_bc(e ** a, y)[2]

    lo, hi = bounds
    grid = np.linspace(lo, hi, 257)
    losses = np.array([sse(a) for a in grid])
    k = int(np.argmin(losses))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    x1, x2 = hi - _GOLDEN * (hi - lo), lo + _GOLDEN * (hi - lo)
    f1, f2 = sse(x1), sse(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - _GOLDEN * (hi - lo)
            f1 = sse(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + _GOLDEN * (hi - lo)
            f2 = sse(x2)
    a = (lo + hi) / 2
    if losses[k] < sse(a):
        a = float(grid[k])
    b, c, res = _solve_bc(e ** a, y)
    return PowerLawFit(a=float(a), b=b, c=c, residual=res)


def epochs_for_error(fit: PowerLawFit, error: float) -> float:
    """Invert the fit: epochs needed to reach ``error``."""
    if fit.b <= 0 or fit.a >= 0:
        raise NumericalError(f"fit is not decreasing (a={fit.a}, b={fit.b})")
    if error <= fit.c:
        raise UnattainableError(error, fit.c)
    return ((error - fit.c) / fit.b) ** (1 / fit.a)


def effective_speedup(fit: PowerLawFit, epochs: float, improved_error: float) -> float:
    """Fractional epoch saving that ``improved_error`` at ``epochs`` is worth under the baseline fit."""
    if epochs <= 0:
        raise ValueError("epochs must be positive")
    return epochs_for_error(fit, improved_error) / epochs - 1


def read_points_csv(source: str | os.PathLike | TextIO) -> list[tuple[float, float]]:
    """Read ``epochs,error`` rows (an optional header row is skipped)."""
    f = open(source, newline="") if isinstance(source, (str, os.PathLike)) else source
    try:
        points = []
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise FormatError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                points.append((float(row[0]), float(row[1])))
            except ValueError:
                if lineno == 1 and not points:
                    continue
                raise FormatError(f"line {lineno}: could not parse {row[:2]} as numbers") from None
        return points
    finally:
        if f is not source:
            f.close()


def predictions_csv(fit: PowerLawFit, points: Iterable[tuple[float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epochs", "error", "prediction"])
    for e, err in points:
        w.writerow([e, err, f"{fit.predict(e):.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# run comparisons
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    mean_diff: float
    t: float
    p: float
    n: int


def paired_greater(a, b) -> Comparison:
    """One-sided paired t-test of ``mean(a - b) > 0``."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two equal-length samples of at least 2 runs")
    res = stats.ttest_rel(a, b, alternative="greater")
    return Comparison(float(np.mean(a - b)), float(res.statistic), float(res.pvalue), len(a))


def independent_greater(a, b) -> Comparison:
    """One-sided Welch t-test of ``mean(a) > mean(b)``."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if min(len(a), len(b)) < 2:
        raise ValueError("need at least 2 runs per sample")
    res = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
    return Comparison(float(a.mean() - b.mean()), float(res.statistic), float(res.pvalue), min(len(a), len(b)))


TABLE1_CELLS = [(s, f) for s in ("with_replacement", "random_reshuffle") for f in ("random", "alternating")]


def table1_experiment(cfg, train_set, test_set, n_runs: int, seeds: list[int] | None = None,
                      cells=TABLE1_CELLS, on_cell=None) -> dict:
    """Train every (sampling, flip) cell with the same seeds; returns ``{cell: RunStats}``."""
    from .trainer import run_many

    seeds = list(seeds) if seeds is not None else [cfg.run.seed + i for i in range(n_runs)]
    grid = {}
    for sampling, flip in cells:
        cell_cfg = replace(cfg, aug=replace(cfg.aug, sampling=sampling, flip=flip))
        grid[(sampling, flip)], _ = run_many(cell_cfg, train_set, test_set, n_runs=n_runs, seeds=seeds)
        if on_cell:
            on_cell((sampling, flip), grid[(sampling, flip)])
    return grid
