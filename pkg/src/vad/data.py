"""Datasets, missingness samplers, synthetic generator, and file formats.

Missing entries are NaN in memory and empty cells on disk. Masks are always
carried alongside (1 = observed, 0 = missing), so the marker itself is never
relied on for anything.
"""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DimensionError, ParseError

MISSING = np.nan
DISTRIBUTIONS = ("normal", "uniform", "beta", "logistic", "gumbel")
DEPENDENT_ACTIVATIONS = ("tanh", "sigmoid", "identity")
IDX_IMAGE_MAGIC = 0x00000803


@dataclass(frozen=True)
class Dataset:
    """Incomplete data ``x`` with its mask and (optionally) the ground truth.

    ``x_hat`` is only for evaluation; training code reads ``x`` and ``masks``.
    """

    x: np.ndarray
    masks: np.ndarray
    x_hat: np.ndarray | None = None

    def __post_init__(self):
        if self.x.shape != self.masks.shape:
            raise DimensionError(f"x {self.x.shape} and masks {self.masks.shape} differ")
        if self.x_hat is not None and self.x_hat.shape != self.x.shape:
            raise DimensionError(f"x_hat {self.x_hat.shape} and x {self.x.shape} differ")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def observed_fraction(self) -> float:
        return float(self.masks.mean()) if self.masks.size else math.nan

    def subset(self, rows) -> "Dataset":
        x_hat = None if self.x_hat is None else self.x_hat[rows]
        return Dataset(self.x[rows], self.masks[rows], x_hat)

    def with_masks(self, masks) -> "Dataset":
        if self.x_hat is None:
            raise ConfigError("re-masking needs the ground truth")
        return apply_mask(self.x_hat, masks)


def apply_mask(x_hat, masks) -> Dataset:
    x_hat = np.asarray(x_hat, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.int8)
    if x_hat.shape != masks.shape:
        raise DimensionError(f"x_hat {x_hat.shape} and masks {masks.shape} differ")
    if not np.isin(masks, (0, 1)).all():
        raise ConfigError("mask entries must be 0 or 1")
    x = np.where(masks == 1, x_hat, MISSING)
    return Dataset(x, masks, x_hat.copy())


def sample_mcar(n: int, d: int, r: float, seed: int = 0) -> np.ndarray:
    """Each entry goes missing (0) independently with probability ``r``."""
    if not 0.0 <= r <= 1.0:
        raise ConfigError(f"missing ratio must be in [0, 1], got {r}")
    rng = np.random.default_rng(seed)
    return (rng.random((n, d)) >= r).astype(np.int8)


def sample_block_mask(rows: int, cols: int, block_h: int = 4, block_w: int = 4,
                      n_blocks: int = 4, seed: int = 0) -> np.ndarray:
    """Zero out ``n_blocks`` uniformly placed, possibly overlapping blocks.

    Returns a flat row-major mask of length ``rows * cols``.
    """
    if n_blocks < 1:
        raise ConfigError("n_blocks must be >= 1")
    if block_h < 1 or block_w < 1 or block_h > rows or block_w > cols:
        raise ConfigError(f"{block_h}x{block_w} block does not fit a {rows}x{cols} grid")
    rng = np.random.default_rng(seed)
    grid = np.ones((rows, cols), dtype=np.int8)
    for _ in range(n_blocks):
        top = rng.integers(0, rows - block_h + 1)
        left = rng.integers(0, cols - block_w + 1)
        grid[top:top + block_h, left:left + block_w] = 0
    return grid.ravel()


def sample_block_masks(n: int, rows: int, cols: int, n_blocks: int = 4, seed: int = 0,
                       block_h: int = 4, block_w: int = 4) -> np.ndarray:
    seeds = np.random.SeedSequence(seed).spawn(n)
    return np.stack([sample_block_mask(rows, cols, block_h, block_w, n_blocks, s)
                     for s in seeds]) if n else np.ones((0, rows * cols), dtype=np.int8)


def mean_baseline(train_x_hat, test_x_hat) -> float:
    """MSE of predicting every test entry with its training column mean."""
    train = np.asarray(train_x_hat, dtype=np.float64)
    test = np.asarray(test_x_hat, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise ConfigError("mean baseline needs a non-empty training set")
    if test.ndim != 2 or test.shape[1] != train.shape[1]:
        raise DimensionError(f"train width {train.shape[1]} vs test shape {test.shape}")
    means = train.mean(axis=0)
    return float(np.mean((test - means) ** 2))


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle rows and cut into train/val/test.

    Train and validation sizes are ``floor(fraction * N)``; test takes the rest.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigError(f"split fractions must be three positives summing to 1, got {fractions}")
    n = dataset.n
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_val = math.floor(fractions[1] * n + 1e-9)
    cuts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(dataset.subset(np.sort(c)) for c in cuts)


# -- synthetic data ---------------------------------------------------------

@dataclass
class SyntheticConfig:
    n: int = 5000
    d: int = 30
    n_independent: int = 10
    seed: int = 0
    distributions: tuple[str, ...] = DISTRIBUTIONS
    max_subset: int = 5
    activations: tuple[str, ...] = DEPENDENT_ACTIVATIONS


@dataclass
class ColumnRecipe:
    """How one synthetic column is produced.

    Independent columns set ``dist``/``params``; dependent columns set the
    rest.
    """

    dist: str | None = None
    params: dict = field(default_factory=dict)
    sources: tuple[int, ...] = ()
    product_weights: tuple[float, ...] = ()
    affine_weights: tuple[float, ...] = ()
    bias: float = 0.0
    activation: str = "identity"


def _half_open(rng, hi):
    # uniform on (0, hi]
    return hi - rng.uniform(0.0, hi)


def _draw_params(rng, dist: str) -> dict:
    if dist == "normal":
        return {"loc": rng.uniform(-1, 1), "scale": _half_open(rng, 2.0)}
    if dist == "uniform":
        a = rng.uniform(-2, 2)
        return {"low": a, "high": rng.uniform(a, 2)}
    if dist == "beta":
        # zero shape parameters give an undefined density
        return {"a": rng.uniform(0.05, 3.0), "b": rng.uniform(0.05, 3.0)}
    if dist == "logistic":
        return {"loc": rng.uniform(-1, 1), "scale": _half_open(rng, 2.0)}
    if dist == "gumbel":
        return {"loc": rng.uniform(-1, 1), "scale": _half_open(rng, 2.0)}
    raise ConfigError(f"unknown distribution {dist!r}")


def synthetic_recipe(cfg: SyntheticConfig) -> list[ColumnRecipe]:
    """Draw the per-column generating recipe; depends only on ``cfg.seed`` and shape."""
    if cfg.n_independent < 2:
        raise ConfigError("need at least 2 independent columns")
    if cfg.d < cfg.n_independent:
        raise ConfigError(f"d={cfg.d} is smaller than n_independent={cfg.n_independent}")
    for dist in cfg.distributions:
        if dist not in DISTRIBUTIONS:
            raise ConfigError(f"unknown distribution {dist!r}")
    rng = np.random.default_rng([cfg.seed, 0])
    recipe = []
    for _ in range(cfg.n_independent):
        dist = cfg.distributions[rng.integers(len(cfg.distributions))]
        recipe.append(ColumnRecipe(dist=dist, params=_draw_params(rng, dist)))
    hi = min(cfg.max_subset, cfg.n_independent)
    for _ in range(cfg.d - cfg.n_independent):
        k = int(rng.integers(2, hi + 1))
        sources = tuple(int(s) for s in np.sort(rng.choice(cfg.n_independent, k, replace=False)))
        recipe.append(ColumnRecipe(
            sources=sources,
            product_weights=tuple(rng.uniform(-1, 1, k)),
            affine_weights=tuple(rng.uniform(-1, 1, k)),
            bias=float(rng.uniform(-1, 1)),
            activation=cfg.activations[rng.integers(len(cfg.activations))],
        ))
    return recipe


def _sample_column(rng, col: ColumnRecipe, n: int) -> np.ndarray:
    p = col.params
    if col.dist == "normal":
        return rng.normal(p["loc"], p["scale"], n)
    if col.dist == "uniform":
        return rng.uniform(p["low"], p["high"], n)
    if col.dist == "beta":
        return rng.beta(p["a"], p["b"], n)
    if col.dist == "logistic":
        return rng.logistic(p["loc"], p["scale"], n)
    return rng.gumbel(p["loc"], p["scale"], n)


def _squash(kind: str, v: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(v)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * v))
    return v


def gen_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Fully observed synthetic dataset.

    The first ``n_independent`` columns are i.i.d. draws from randomly
    parameterised univariate distributions. Every further column mixes a
    random subset of them: a weighted elementwise product plus a weighted sum
    and bias, passed through a random activation.
    """
    if cfg.n < 1:
        raise ConfigError("n must be >= 1")
    recipe = synthetic_recipe(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    x = np.empty((cfg.n, cfg.d))
    for j, col in enumerate(recipe[:cfg.n_independent]):
        x[:, j] = _sample_column(rng, col, cfg.n)
    for j, col in enumerate(recipe[cfg.n_independent:], start=cfg.n_independent):
        src = x[:, col.sources]
        product = np.prod(src * np.asarray(col.product_weights), axis=1)
        affine = src @ np.asarray(col.affine_weights) + col.bias
        x[:, j] = _squash(col.activation, product + affine)
    return Dataset(x.copy(), np.ones(x.shape, dtype=np.int8), x)


# -- CSV --------------------------------------------------------------------

def _header(d: int) -> list[str]:
    return [f"dim_{j}" for j in range(d)]


def write_csv(path, dataset_or_array) -> None:
    """Header ``dim_0..dim_{d-1}``, LF endings, empty cell for missing."""
    x = dataset_or_array.x if isinstance(dataset_or_array, Dataset) else np.asarray(
        dataset_or_array, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(x.shape[1]))
        for row in x:
            writer.writerow(["" if math.isnan(v) else repr(float(v)) for v in row])


def write_mask_csv(path, masks) -> None:
    masks = np.asarray(masks)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(masks.shape[1]))
        writer.writerows([[str(int(v)) for v in row] for row in masks])


def _read_table(path) -> tuple[list[list[str]], int]:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 at byte offset {exc.start}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}: empty file, expected a header at byte offset 0")
    header = lines[0].rstrip("\r").split(",")
    offset = 0
    for j, name in enumerate(header):
        if name.strip() != f"dim_{j}":
            raise ParseError(f"{path}: bad header field {name!r} at byte offset {offset}, "
                             f"expected 'dim_{j}'")
        offset += len(name.encode("utf-8")) + 1
    rows = []
    for i, line in enumerate(lines[1:], start=1):
        cells = next(csv.reader([line.rstrip("\r")])) if line else [""]
        if len(cells) != len(header):
            raise ParseError(f"{path}: row {i} has {len(cells)} cells, expected {len(header)}")
        rows.append(cells)
    return rows, len(header)


def read_csv(path) -> Dataset:
    """Load a data CSV; empty cells become missing entries.

    ``x_hat`` is filled in only when the file has no missing cells.
    """
    rows, d = _read_table(path)
    x = np.empty((len(rows), d))
    for i, cells in enumerate(rows, start=1):
        for j, cell in enumerate(cells):
            cell = cell.strip()
            if cell == "":
                x[i - 1, j] = MISSING
                continue
            try:
                x[i - 1, j] = float(cell)
            except ValueError as exc:
                raise ParseError(f"{path}: row {i}, column {j}: not a number: {cell!r}") from exc
    masks = (~np.isnan(x)).astype(np.int8)
    x_hat = x.copy() if masks.all() else None
    return Dataset(x, masks, x_hat)


def read_mask_csv(path) -> np.ndarray:
    rows, d = _read_table(path)
    masks = np.empty((len(rows), d), dtype=np.int8)
    for i, cells in enumerate(rows, start=1):
        for j, cell in enumerate(cells):
            if cell.strip() not in ("0", "1"):
                raise ParseError(f"{path}: row {i}, column {j}: mask cell must be 0 or 1")
            masks[i - 1, j] = int(cell)
    return masks


def load_dataset(data_path, masks_path=None) -> Dataset:
    """Data CSV plus optional mask CSV; the mask file wins over empty cells."""
    ds = read_csv(data_path)
    if masks_path is None:
        return ds
    masks = read_mask_csv(masks_path)
    if masks.shape != ds.x.shape:
        raise DimensionError(f"mask file shape {masks.shape} vs data {ds.x.shape}")
    if np.any(np.isnan(ds.x) & (masks == 1)):
        raise ParseError(f"{data_path}: mask marks an empty cell as observed")
    x_hat = np.where(masks == 1, ds.x, 0.0) if ds.x_hat is None else ds.x_hat
    out = apply_mask(x_hat, masks)
    return out if ds.x_hat is not None else Dataset(out.x, out.masks, None)


# -- IDX --------------------------------------------------------------------

def _open_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def load_idx(images_path) -> Dataset:
    """Read an IDX3 unsigned-byte image file into an ``[N, rows*cols]`` dataset in [0, 1]."""
    raw = _open_bytes(images_path)
    if len(raw) < 4:
        raise ParseError(f"{images_path}: truncated magic at byte offset {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_IMAGE_MAGIC:
        raise ParseError(f"{images_path}: bad magic 0x{magic:08x} at byte offset 0, "
                         f"expected 0x{IDX_IMAGE_MAGIC:08x}")
    if len(raw) < 16:
        raise ParseError(f"{images_path}: truncated header at byte offset {len(raw)}")
    n, rows, cols = struct.unpack(">III", raw[4:16])
    expected = n * rows * cols
    payload = raw[16:]
    if len(payload) != expected:
        raise ParseError(f"{images_path}: payload at byte offset 16 has {len(payload)} bytes, "
                         f"header declares {expected}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)
    x = pixels.astype(np.float64) / 255.0
    return Dataset(x.copy(), np.ones(x.shape, dtype=np.int8), x)


def load_idx_raw(images_path) -> np.ndarray:
    """Pixels as stored (0..255), shape ``[N, rows*cols]``."""
    return np.rint(load_idx(images_path).x_hat * 255.0)


def write_idx(path, images) -> None:
    """Write ``[N, rows, cols]`` uint8 images in IDX3 format."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DimensionError("write_idx expects [N, rows, cols]")
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape)
    data = header + images.tobytes()
    Path(path).write_bytes(gzip.compress(data) if str(path).endswith(".gz") else data)


def write_pgm(path, image, rows: int, cols: int) -> None:
    """Binary PGM dump of a flat image with values in [0, 1]; NaN shows as mid-grey."""
    img = np.asarray(image, dtype=np.float64).reshape(rows, cols)
    img = np.where(np.isnan(img), 0.5, np.clip(img, 0.0, 1.0))
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode() + np.rint(img * 255).astype(np.uint8).tobytes())
