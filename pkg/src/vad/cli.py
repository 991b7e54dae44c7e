"""Command-line entry point: ``vad <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data or file-format error,
4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import (
    SyntheticConfig,
    gen_synthetic,
    load_dataset,
    load_idx,
    read_csv,
    read_mask_csv,
    sample_block_masks,
    sample_mcar,
    write_csv,
    write_mask_csv,
    write_pgm,
)
from .engine import TrainConfig, eval_mse, impute, infer, train
from .exceptions import (
    ConfigError,
    DimensionError,
    FormatError,
    NumericError,
    ParseError,
    VADError,
)
from .experiments import experiment1, experiment2, write_metrics_csv
from .models import PosteriorBank

logger = logging.getLogger("vad")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

DESK_GRID = [
    {"d_z": d_z, "hidden": (width,) * depth, "lr_theta": lr, "lr_phi": lr}
    for d_z in (8, 25) for width in (50, 100) for depth in (2, 4) for lr in (1e-2, 1e-3)
]
SIGMA_GRID = [{"sigma_mode": s} for s in (0.01, 0.1, 0.5)]
# sigma sweep used by the acceptance runs
ACCEPT_GRID = [{"sigma_mode": s} for s in (0.1, 0.5)]
GRIDS = {"none": None, "desk": DESK_GRID, "sigma": SIGMA_GRID, "accept": ACCEPT_GRID}


def _load_config(path, **overrides) -> TrainConfig:
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(doc)


def write_posteriors(path, bank: PosteriorBank) -> None:
    k = bank.d_z
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"mu_{j}" for j in range(k)] + [f"log_sigma_{j}" for j in range(k)])
        for mu, ls in zip(bank.mu, bank.log_sigma):
            writer.writerow([repr(float(v)) for v in (*mu, *ls)])


def read_posteriors(path) -> PosteriorBank:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty posterior file")
    width = len(rows[0])
    if width % 2 or rows[0][: width // 2] != [f"mu_{j}" for j in range(width // 2)]:
        raise ParseError(f"{path}: bad posterior header at byte offset 0")
    try:
        values = np.array([[float(v) for v in row] for row in rows[1:]]).reshape(-1, width)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric or ragged posterior rows") from exc
    k = width // 2
    return PosteriorBank(values[:, :k].copy(), values[:, k:].copy())


def cmd_gen_data(args) -> None:
    cfg = SyntheticConfig(n=args.n, d=args.d, n_independent=args.n_independent, seed=args.seed)
    write_csv(args.out, gen_synthetic(cfg))


def cmd_mask(args) -> None:
    if args.data:
        n, d = read_csv(args.data).x.shape
    else:
        n, d = args.n, args.d
    if n is None or d is None:
        raise ConfigError("give --data or both --n and --d")
    if args.blocks is not None:
        rows, cols = args.image_shape
        if rows * cols != d:
            raise ConfigError(f"image shape {rows}x{cols} does not cover {d} columns")
        masks = sample_block_masks(n, rows, cols, args.blocks, args.seed, args.block_size, args.block_size)
    else:
        masks = sample_mcar(n, d, args.rate, args.seed)
    write_mask_csv(args.out, masks)


def cmd_train(args) -> None:
    cfg = _load_config(args.config, model_kind=args.model, seed=args.seed)
    ds = load_dataset(args.data, args.masks)
    val = load_dataset(args.val_data, args.val_masks) if args.val_data else None
    result = train(ds, cfg, val)
    checkpoint.save(args.out, result.bundle)
    if args.posteriors_out and result.posterior is not None:
        write_posteriors(args.posteriors_out, result.posterior)
    if args.metrics_out:
        doc = {"model": cfg.model_kind, "epochs": result.epochs, "train_curve": result.curve,
               "val_curve": result.val_curve,
               "final_lower_bound": result.curve[-1] if result.curve else None}
        Path(args.metrics_out).write_text(json.dumps(doc, indent=2) + "\n")
    logger.info("trained %s for %d epochs", cfg.model_kind, result.epochs)


def cmd_infer(args) -> None:
    bundle = checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data, args.masks)
    bank, lb = infer(bundle, ds, seed=args.seed)
    write_posteriors(args.out, bank)
    print(json.dumps({"lower_bound": lb, "rows": ds.n}))


def cmd_impute(args) -> None:
    bundle = checkpoint.load(args.checkpoint)
    bank = read_posteriors(args.posteriors)
    ds = load_dataset(args.data, args.masks)
    if len(bank) != ds.n:
        raise DimensionError(f"{len(bank)} posteriors for {ds.n} data rows")
    completed = impute(bundle, bank, ds.x, ds.masks)
    write_csv(args.out, completed)
    if args.pgm_dir:
        rows, cols = args.image_shape
        out = Path(args.pgm_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, (given, filled) in enumerate(zip(ds.x, completed)):
            write_pgm(out / f"row{i:05d}_given.pgm", given, rows, cols)
            write_pgm(out / f"row{i:05d}_imputed.pgm", filled, rows, cols)


def _json_number(v: float):
    return None if math.isnan(v) else v


def cmd_eval(args) -> None:
    decoded = read_csv(args.decoded).x
    truth = read_csv(args.truth).x
    masks = read_mask_csv(args.masks)
    inc, miss, full = eval_mse(decoded, truth, masks)
    doc = {"mse_incomplete": _json_number(inc), "mse_missing": _json_number(miss),
           "mse_full": _json_number(full)}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _experiment_source(args):
    if args.dataset == "synthetic":
        return gen_synthetic(SyntheticConfig(n=args.n, d=args.d, n_independent=args.n_independent,
                                             seed=args.seed))
    if not args.data:
        raise ConfigError(f"--dataset {args.dataset} needs --data")
    if args.dataset == "idx":
        return load_idx(args.data)
    ds = read_csv(args.data)
    if ds.x_hat is None:
        raise ConfigError("experiments need a fully observed CSV as ground truth")
    return ds


def cmd_experiment(args) -> None:
    base = _load_config(args.config, seed=args.seed)
    source = _experiment_source(args)
    rates = [float(r) for r in args.rates.split(",")] if args.rates else None
    kwargs = dict(base=base, cfg_grid=GRIDS[args.grid], n_test_runs=args.n_test_runs,
                  seed=args.seed, timing=not args.no_timing)
    if rates is not None:
        kwargs["r_grid"] = rates
    if args.id == 1:
        records = experiment1(source, **kwargs)
    else:
        if args.mode is None:
            raise ConfigError("experiment 2 needs --mode test-only|train-only")
        records = experiment2(source, args.mode.replace("-", "_"), **kwargs)
    write_metrics_csv(args.out, records)


def _image_shape(text: str):
    try:
        rows, cols = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from exc
    return rows, cols


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic ground-truth CSV")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--d", type=int, default=30)
    p.add_argument("--n-independent", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("mask", help="write an MCAR or block mask CSV")
    p.add_argument("--data", help="CSV whose shape the mask should match")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--rate", type=float, help="MCAR missing ratio")
    group.add_argument("--blocks", type=int, help="number of square blocks per image")
    p.add_argument("--block-size", type=int, default=4)
    p.add_argument("--image-shape", type=_image_shape, default=(28, 28))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--model", choices=("vad", "vae"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--masks")
    p.add_argument("--val-data")
    p.add_argument("--val-masks")
    p.add_argument("--config", help="JSON object of training options")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics-out")
    p.add_argument("--posteriors-out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="posterior parameters for new rows")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--masks")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("impute", help="fill missing entries from decoded posterior means")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--posteriors", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--masks")
    p.add_argument("--out", required=True)
    p.add_argument("--pgm-dir", help="also dump given/imputed rows as PGM images")
    p.add_argument("--image-shape", type=_image_shape, default=(28, 28))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("eval", help="category MSE of decoded rows against ground truth")
    p.add_argument("--decoded", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run the missing-data benchmark")
    p.add_argument("--id", type=int, choices=(1, 2), required=True)
    p.add_argument("--mode", choices=("test-only", "train-only"))
    p.add_argument("--dataset", choices=("synthetic", "csv", "idx"), default="synthetic")
    p.add_argument("--data", help="CSV or IDX file for --dataset csv|idx")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--d", type=int, default=30)
    p.add_argument("--n-independent", type=int, default=10)
    p.add_argument("--config", help="JSON object of base training options")
    p.add_argument("--grid", choices=sorted(GRIDS), default="none")
    p.add_argument("--rates", help="comma-separated missing ratios (default 0.1..0.9)")
    p.add_argument("--n-test-runs", type=int, default=5)
    p.add_argument("--no-timing", action="store_true",
                   help="leave the seconds column empty so reruns are byte-identical")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DimensionError, ParseError, FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, VADError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
