"""Command-line front end: ``fastcifar train|coverage|fit|eval``.

Exit codes: 0 success, 2 configuration error, 3 I/O or format error,
4 numerical error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import analysis, config as config_mod
from .data import FLIP_POLICIES, SAMPLING_MODES, Dataset, load_dataset, normalize, synthetic_dataset
from .evaluate import evaluate
from .exceptions import ConfigError, FormatError, NumericalError, UnattainableError
from .model import build
from .rng import stream

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4
DATA_ENV = "AIRBENCH_DATA"

log = logging.getLogger("fastcifar")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _resolve_config(args) -> config_mod.Config:
    cfg = config_mod.preset(args.preset)
    if args.config:
        cfg = config_mod.load(args.config, base=cfg)
    hp, net, run = cfg.hp, cfg.net, cfg.run
    if getattr(args, "epochs", None) is not None:
        hp = replace(hp, train_epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        hp = replace(hp, batch_size=args.batch_size)
    if getattr(args, "tta_level", None) is not None:
        hp = replace(hp, tta_level=args.tta_level)
    if args.scale is not None:
        net = net.scaled(args.scale)
    overrides = {k: getattr(args, k, None) for k in ("seed", "data", "out", "train_subset", "test_subset", "jobs")}
    if getattr(args, "runs", None) is not None:
        overrides["n_runs"] = args.runs
    if getattr(args, "no_warmup", False):
        overrides["warmup"] = False
    if getattr(args, "epoch_eval", None) is not None:
        overrides["epoch_eval"] = args.epoch_eval
    run = replace(run, **{k: v for k, v in overrides.items() if v is not None})
    return replace(cfg, hp=hp, net=net, run=run)


def _datasets(cfg: config_mod.Config, synthetic: int | None) -> tuple[Dataset, Dataset]:
    if synthetic:
        train_set, test_set = synthetic_dataset(synthetic, seed=0), synthetic_dataset(max(synthetic // 5, 1), seed=1)
    else:
        path = cfg.run.data or os.environ.get(DATA_ENV)
        if not path:
            raise FileNotFoundError(f"no data directory: pass --data or set {DATA_ENV}")
        train_set, test_set = load_dataset(path, "train"), load_dataset(path, "test")
    if cfg.run.train_subset:
        train_set = train_set.subset(cfg.run.train_subset)
    if cfg.run.test_subset:
        test_set = test_set.subset(cfg.run.test_subset)
    return train_set, test_set


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="airbench94", choices=["airbench94", "airbench95", "airbench96"])
    p.add_argument("--config", help="JSON config layered over the preset")
    p.add_argument("--scale", type=float, help="multiply every block width by this factor")
    p.add_argument("--data", help=f"CIFAR-10 directory or dataset archive (default ${DATA_ENV})")
    p.add_argument("--synthetic", type=int, metavar="N", help="use N synthetic training images instead of --data")
    p.add_argument("--train-subset", type=int, help="keep only the first N training images")
    p.add_argument("--test-subset", type=int, help="keep only the first N test images")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .trainer import RunStats, format_header, format_row, run_many, train, warmup

    cfg = _resolve_config(args)
    if args.dump_config is not None:
        text = cfg.dumps() + "\n"
        if args.dump_config == "-":
            sys.stdout.write(text)
        else:
            Path(args.dump_config).write_text(text)
        return EXIT_OK

    train_set, test_set = _datasets(cfg, args.synthetic)
    out = Path(cfg.run.out) if cfg.run.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.dumps() + "\n")

    print(format_header())
    echo = lambda row, final: print(format_row(row, final), flush=True)
    if cfg.run.warmup:
        warmup(cfg, train_set, test_set, seed=cfg.run.seed)

    seeds = [cfg.run.seed + i for i in range(cfg.run.n_runs)]
    if cfg.run.jobs > 1 or not out:
        stats, logs = run_many(cfg, train_set, test_set, seeds=seeds, n_runs=len(seeds), jobs=cfg.run.jobs, on_row=echo)
    else:
        logs = []
        for i, s in enumerate(seeds):
            net, lg = train(cfg, train_set, test_set, seed=s, run=i, on_row=echo)
            net.save(out / f"run{i}.abt")
            logs.append(lg)
        stats = RunStats.from_accs([lg.tta_val_acc for lg in logs])

    summary = stats.to_dict() | {"seeds": seeds}
    print(json.dumps({k: summary[k] for k in ("n", "mean", "std", "ci95")}))
    if out:
        with open(out / "runs.jsonl", "w") as f:
            for lg in logs:
                f.write(lg.to_jsonl())
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_coverage(args) -> int:
    rep = analysis.coverage(args.flip, args.sampling, args.n, args.window, args.trials, args.seed)
    unique = int(rep.unique_pairs) if rep.unique_pairs.is_integer() else round(rep.unique_pairs, 3)
    print(f"flip={args.flip} sampling={args.sampling} n={rep.n} window={rep.window_epochs} "
          f"trials={rep.trials} unique={unique} expected={rep.expected_unique:.3f} "
          f"range=[{rep.min_unique}, {rep.max_unique}]")
    if args.out:
        Path(args.out).write_text(json.dumps(asdict(rep), indent=2) + "\n")
    return EXIT_OK


def cmd_fit(args) -> int:
    points = analysis.read_points_csv(args.csv)
    fit = analysis.fit_power_law(points)
    print(f"fit: error = {fit.c:.4f} + {fit.b:.4f} * epochs^{fit.a:.4f}  (residual {fit.residual:.3g})")
    if args.predictions:
        Path(args.predictions).write_text(analysis.predictions_csv(fit, points))
    if args.improved_error is not None:
        if args.epochs is None:
            raise ConfigError("--improved-error needs --epochs")
        e = analysis.epochs_for_error(fit, args.improved_error)
        speedup = analysis.effective_speedup(fit, args.epochs, args.improved_error)
        print(f"epochs to reach {args.improved_error}: {e:.3f}")
        print(f"speedup: {100 * speedup:.1f}%")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.ckpt)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    sidecar = ckpt.parent / "config.json"
    if not args.config and sidecar.is_file():
        args.config = str(sidecar)
    cfg = _resolve_config(args)
    _, test_set = _datasets(cfg, args.synthetic)
    net = build(cfg.net, stream(0, "init"))
    net.load(ckpt)
    acc = evaluate(net, normalize(test_set.images), test_set.labels, level=args.tta_level)
    print(f"tta_level={args.tta_level} accuracy={acc:.4f} n={len(test_set)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fastcifar", description="Fast CIFAR-10 training on the CPU.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one or more networks")
    _add_config_args(p)
    p.add_argument("--runs", type=int, help="number of runs (distinct seeds)")
    p.add_argument("--seed", type=int, help="seed of the first run")
    p.add_argument("--epochs", type=float, help="override opt.train_epochs")
    p.add_argument("--batch-size", type=int, help="override opt.batch_size")
    p.add_argument("--tta-level", type=int, choices=[0, 1, 2])
    p.add_argument("--epoch-eval", choices=["all", "last", "none"], help="which epochs get a plain evaluation")
    p.add_argument("--out", help="directory for runs.jsonl, summary.json, config.json and checkpoints")
    p.add_argument("--jobs", type=int, help="parallel worker processes")
    p.add_argument("--no-warmup", action="store_true", help="skip the random-label warmup run")
    p.add_argument("--dump-config", nargs="?", const="-", metavar="PATH",
                   help="write the resolved config (to stdout by default) and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("coverage", help="count distinct (index, orientation) pairs")
    p.add_argument("--flip", default="alternating", choices=FLIP_POLICIES)
    p.add_argument("--sampling", default="random_reshuffle", choices=SAMPLING_MODES)
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("fit", help="fit error = c + b*epochs^a and compute an effective speedup")
    p.add_argument("--csv", required=True, help="rows of epochs,error")
    p.add_argument("--epochs", type=float)
    p.add_argument("--improved-error", type=float)
    p.add_argument("--predictions", help="write epochs,error,prediction CSV here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tta-level", type=int, default=2, choices=[0, 1, 2])
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, UnattainableError, FloatingPointError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
