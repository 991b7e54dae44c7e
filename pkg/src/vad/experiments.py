"""Missing-data benchmark harness.

``experiment1`` trains and tests at the same MCAR missing ratio;
``experiment2`` covers the two extremes where only the test split or only the
training split is incomplete. Both produce :class:`MetricsRecord` rows that
:func:`write_metrics_csv` serialises.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import replace

import numpy as np

from .data import Dataset, mean_baseline, sample_mcar, split
from .engine import MetricsRecord, TrainConfig, evaluate, eval_mse, infer, reconstruct, train
from .exceptions import ConfigError, VADError

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("model", "r_train", "r_test", "seed", "mse_incomplete", "mse_missing",
                   "mse_full", "lower_bound", "seconds", "mean_baseline")
DEFAULT_R_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _masked(ds: Dataset, r: float, seed: int) -> Dataset:
    return ds.with_masks(sample_mcar(ds.n, ds.d, r, seed))


def _configs(base: TrainConfig, model: str, grid) -> list[TrainConfig]:
    grid = list(grid) if grid else [{}]
    return [replace(base, model_kind=model, **overrides) for overrides in grid]


def _score(result, val: Dataset, criterion: str) -> float:
    bank, lb = infer(result.bundle, val, init=result.val_posterior)
    if criterion == "lower_bound":
        return lb
    # incomplete-category MSE only looks at observed entries, so x stands in for x_hat
    inc, _, _ = eval_mse(reconstruct(result.bundle, bank.mu), np.where(val.masks == 1, val.x, 0.0),
                         val.masks)
    return -inc


def select_model(train_ds: Dataset, val_ds: Dataset, configs: list[TrainConfig],
                 criterion: str = "lower_bound"):
    """Train every config; keep the best validation score.

    ``criterion`` is ``"lower_bound"`` (higher is better) or
    ``"mse_incomplete"`` (lower is better). Ties go to the smaller model.
    Returns ``(result, seconds_spent_training_the_winner)``.
    """
    if criterion not in ("lower_bound", "mse_incomplete"):
        raise ConfigError(f"unknown selection criterion {criterion!r}")
    best = None
    for cfg in configs:
        start = time.perf_counter()
        try:
            result = train(train_ds, cfg, val_ds)
        except VADError as exc:
            raise type(exc)(f"training {cfg.model_kind} with {cfg.to_dict()}: {exc}") from exc
        seconds = time.perf_counter() - start
        score = _score(result, val_ds, criterion)
        key = (score, -result.bundle.n_params())
        logger.info("%s d_z=%d hidden=%s sigma=%s -> %s %.6f", cfg.model_kind, cfg.d_z, cfg.hidden,
                    cfg.sigma_mode, criterion, score)
        if best is None or key > best[0]:
            best = (key, result, seconds)
    return best[1], best[2]


def _test_runs(result, test: Dataset, model: str, r_train: float, r_test: float, r_index: int,
               n_test_runs: int, seed: int, train_seconds: float, baseline: float,
               timing: bool) -> list[MetricsRecord]:
    records = []
    for k in range(n_test_runs):
        start = time.perf_counter()
        test_m = _masked(test, r_test, _seed(seed, 3, r_index, k))
        bank, lb = infer(result.bundle, test_m, seed=_seed(seed, 4, r_index, k))
        inc, miss, full = evaluate(result.bundle, test_m, bank)
        seconds = train_seconds + time.perf_counter() - start
        records.append(MetricsRecord(model, r_train, r_test, seed + k, inc, miss, full, lb,
                                     seconds if timing else None, baseline))
    return records


def _prepare(source: Dataset, seed: int, fractions):
    if source.x_hat is None:
        raise ConfigError("experiments need fully observed ground-truth data")
    train_ds, val_ds, test_ds = split(source, fractions, seed=_seed(seed, 0))
    return train_ds, val_ds, test_ds, mean_baseline(train_ds.x_hat, test_ds.x_hat)


def _with_zero(r_grid, include_zero: bool) -> list[float]:
    rates = [float(r) for r in r_grid]
    for r in rates:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"missing ratio {r} outside [0, 1]")
    if include_zero and 0.0 not in rates:
        rates.insert(0, 0.0)
    return rates


def experiment1(source: Dataset, base: TrainConfig | None = None, cfg_grid=None,
                r_grid=DEFAULT_R_GRID, n_test_runs: int = 5, models=("vad", "vae"),
                seed: int = 0, fractions=(0.8, 0.1, 0.1), include_zero: bool = True,
                timing: bool = True) -> list[MetricsRecord]:
    """Same missing ratio at train, validation and test time.

    For each ratio and model kind, every config in ``cfg_grid`` (a list of
    :class:`TrainConfig` overrides) is trained, the best by validation lower
    bound is kept, and ``n_test_runs`` freshly masked test runs are scored.
    """
    base = base or TrainConfig()
    train_ds, val_ds, test_ds, baseline = _prepare(source, seed, fractions)
    records = []
    for i, r in enumerate(_with_zero(r_grid, include_zero)):
        train_m = _masked(train_ds, r, _seed(seed, 1, i))
        val_m = _masked(val_ds, r, _seed(seed, 2, i))
        for model in models:
            result, secs = select_model(train_m, val_m, _configs(base, model, cfg_grid))
            records += _test_runs(result, test_ds, model, r, r, i, n_test_runs, seed, secs,
                                  baseline, timing)
    return records


def experiment2(source: Dataset, mode: str, base: TrainConfig | None = None, cfg_grid=None,
                r_grid=DEFAULT_R_GRID, n_test_runs: int = 5, models=("vad", "vae"),
                seed: int = 0, fractions=(0.8, 0.1, 0.1), include_zero: bool = True,
                timing: bool = True) -> list[MetricsRecord]:
    """Missingness only at test time (``test_only``) or only at training time (``train_only``).

    Model selection uses validation incomplete-category MSE. Mask seeds match
    :func:`experiment1` for the same ratio index, so ``r_test = 0`` in
    ``test_only`` mode reproduces experiment 1's ``r = 0`` cell when the
    grids agree.
    """
    if mode not in ("test_only", "train_only"):
        raise ConfigError(f"mode must be 'test_only' or 'train_only', got {mode!r}")
    base = base or TrainConfig()
    train_ds, val_ds, test_ds, baseline = _prepare(source, seed, fractions)
    rates = _with_zero(r_grid, include_zero)
    records = []
    for model in models:
        configs = _configs(base, model, cfg_grid)
        if mode == "test_only":
            result, secs = select_model(train_ds, val_ds, configs, "mse_incomplete")
            for i, r in enumerate(rates):
                records += _test_runs(result, test_ds, model, 0.0, r, i, n_test_runs, seed, secs,
                                      baseline, timing)
        else:
            for i, r in enumerate(rates):
                train_m = _masked(train_ds, r, _seed(seed, 1, i))
                val_m = _masked(val_ds, r, _seed(seed, 2, i))
                result, secs = select_model(train_m, val_m, configs, "mse_incomplete")
                records += _test_runs(result, test_ds, model, r, 0.0, i, n_test_runs, seed, secs,
                                      baseline, timing)
    return records


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_metrics_csv(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for rec in records:
            writer.writerow([_cell(getattr(rec, col)) for col in METRICS_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            def num(key):
                return math.nan if row[key] == "" else float(row[key])
            out.append(MetricsRecord(
                row["model"], float(row["r_train"]), float(row["r_test"]), int(row["seed"]),
                num("mse_incomplete"), num("mse_missing"), num("mse_full"), num("lower_bound"),
                None if row["seconds"] == "" else float(row["seconds"]),
                None if row.get("mean_baseline", "") == "" else float(row["mean_baseline"])))
    return out


def summarise(records: list[MetricsRecord], field: str = "mse_full") -> dict:
    """Mean of ``field`` per (model, r_train, r_test)."""
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.model, rec.r_train, rec.r_test), []).append(getattr(rec, field))
    return {key: float(np.mean(vals)) for key, vals in groups.items()}
