import gzip
import math
import struct

import numpy as np
import pytest
from scipy import stats

from vad.data import (
    Dataset,
    SyntheticConfig,
    apply_mask,
    gen_synthetic,
    load_dataset,
    load_idx,
    load_idx_raw,
    mean_baseline,
    read_csv,
    read_mask_csv,
    sample_block_mask,
    sample_mcar,
    split,
    synthetic_recipe,
    write_csv,
    write_idx,
    write_mask_csv,
)
from vad.exceptions import ConfigError, DimensionError, ParseError


def scipy_dist(col):
    p = col.params
    return {
        "normal": lambda: stats.norm(p["loc"], p["scale"]),
        "uniform": lambda: stats.uniform(p["low"], p["high"] - p["low"]),
        "beta": lambda: stats.beta(p["a"], p["b"]),
        "logistic": lambda: stats.logistic(p["loc"], p["scale"]),
        "gumbel": lambda: stats.gumbel_r(p["loc"], p["scale"]),
    }[col.dist]()


def test_gen_synthetic_deterministic():
    cfg = SyntheticConfig(n=200, d=12, n_independent=4, seed=5)
    a, b = gen_synthetic(cfg), gen_synthetic(cfg)
    assert a.x_hat.tobytes() == b.x_hat.tobytes()
    assert a.masks.all()


def test_gen_synthetic_config_errors():
    with pytest.raises(ConfigError):
        gen_synthetic(SyntheticConfig(n=10, d=3, n_independent=4))
    with pytest.raises(ConfigError):
        gen_synthetic(SyntheticConfig(n=10, d=3, n_independent=1))


@pytest.mark.parametrize("seed", range(5))
def test_recipe_parameters_in_table_ranges(seed):
    cfg = SyntheticConfig(n=1, d=60, n_independent=40, seed=seed)
    for col in synthetic_recipe(cfg):
        p = col.params
        if col.dist in ("normal", "logistic", "gumbel"):
            assert -1 <= p["loc"] <= 1 and 0 < p["scale"] <= 2
        elif col.dist == "uniform":
            assert -2 <= p["low"] <= p["high"] <= 2
        elif col.dist == "beta":
            assert 0 < p["a"] <= 3 and 0 < p["b"] <= 3
        else:
            assert 2 <= len(col.sources) <= min(5, cfg.n_independent)
            assert all(-1 <= w <= 1 for w in col.product_weights + col.affine_weights)
            assert -1 <= col.bias <= 1


def test_independent_columns_pass_ks():
    cfg = SyntheticConfig(n=10_000, d=10, n_independent=10, seed=11)
    ds = gen_synthetic(cfg)
    for j, col in enumerate(synthetic_recipe(cfg)):
        assert stats.kstest(ds.x_hat[:, j], scipy_dist(col).cdf).pvalue > 0.01, col


def test_normal_column_sample_mean():
    cfg = SyntheticConfig(n=10_000, d=10, n_independent=10, seed=0,
                          distributions=("normal",))
    ds = gen_synthetic(cfg)
    for j, col in enumerate(synthetic_recipe(cfg)):
        bound = 3 * col.params["scale"] / math.sqrt(cfg.n)
        assert abs(ds.x_hat[:, j].mean() - col.params["loc"]) < bound


def test_sigmoid_columns_in_unit_interval():
    cfg = SyntheticConfig(n=2000, d=30, n_independent=5, seed=3, activations=("sigmoid",))
    dep = gen_synthetic(cfg).x_hat[:, 5:]
    assert ((dep > 0) & (dep < 1)).all()


def test_mcar_examples():
    assert sample_mcar(5, 4, 0.0, 1).all()
    assert not sample_mcar(5, 4, 1.0, 1).any()
    m = sample_mcar(1000, 1000, 0.5, 2)
    assert abs(1 - m.mean() - 0.5) < 0.002
    np.testing.assert_array_equal(sample_mcar(10, 3, 0.3, 9), sample_mcar(10, 3, 0.3, 9))
    for r in (-0.1, 1.1):
        with pytest.raises(ConfigError):
            sample_mcar(2, 2, r)


def test_mcar_column_rates_within_binomial_bound():
    n, r = 10_000, 0.3
    rates = 1 - sample_mcar(n, 20, r, 4).mean(axis=0)
    assert np.all(np.abs(rates - r) < 3 * math.sqrt(r * (1 - r) / n))


def test_block_mask_examples():
    assert (sample_block_mask(28, 28, n_blocks=1, seed=0) == 0).sum() == 16
    with pytest.raises(ConfigError):
        sample_block_mask(28, 28, n_blocks=0)
    with pytest.raises(ConfigError):
        sample_block_mask(3, 3)


def test_two_block_union_matches_enumerated_overlaps():
    # zeros of two 4x4 blocks = 32 - overlap; enumerate every relative offset
    offsets = range(-24, 25)
    possible = {32 - max(0, 4 - abs(dy)) * max(0, 4 - abs(dx)) for dy in offsets for dx in offsets}
    seen = {int((sample_block_mask(28, 28, n_blocks=2, seed=s) == 0).sum()) for s in range(300)}
    assert seen <= possible
    assert min(possible) == 16


def test_three_blocks_zero_count_bounds():
    for s in range(300):
        zeros = (sample_block_mask(28, 28, n_blocks=3, seed=s) == 0).sum()
        assert 16 <= zeros <= 48


def test_apply_mask_examples():
    x_hat = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(apply_mask(x_hat, [[1, 1]]).x, x_hat)
    assert np.isnan(apply_mask(x_hat, [[0, 0]]).x).all()
    out = apply_mask(x_hat, [[1, 0]])
    assert out.x[0, 0] == 1.0 and np.isnan(out.x[0, 1])
    with pytest.raises(DimensionError):
        apply_mask(x_hat, [[1, 0, 1]])


def test_apply_mask_preserves_observed():
    rng = np.random.default_rng(0)
    x_hat = rng.normal(size=(50, 6))
    masks = sample_mcar(50, 6, 0.4, 1)
    ds = apply_mask(x_hat, masks)
    np.testing.assert_array_equal(ds.x[masks == 1], x_hat[masks == 1])


def test_mean_baseline_examples():
    train = np.array([[0.0], [2.0]])
    assert mean_baseline(train, [[1.0]]) == 0.0
    assert mean_baseline(train, np.ones((3, 1))) == 0.0
    assert mean_baseline([[1.0, 3.0]], [[2.0, 3.0]]) == 0.5
    with pytest.raises(ConfigError):
        mean_baseline(np.zeros((0, 1)), [[1.0]])


def test_split_sizes_and_partition():
    x = np.arange(200.0).reshape(100, 2)
    parts = split(apply_mask(x, np.ones_like(x)), (0.8, 0.1, 0.1), seed=3)
    assert [p.n for p in parts] == [80, 10, 10]
    firsts = np.concatenate([p.x[:, 0] for p in parts])
    np.testing.assert_array_equal(np.sort(firsts), x[:, 0])
    again = split(apply_mask(x, np.ones_like(x)), (0.8, 0.1, 0.1), seed=3)
    assert all(a.x.tobytes() == b.x.tobytes() for a, b in zip(parts, again))
    with pytest.raises(ConfigError):
        split(parts[0], (0.5, 0.5, 0.5))


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ds = apply_mask(rng.normal(size=(7, 4)) * 1e3, sample_mcar(7, 4, 0.3, 2))
    path = tmp_path / "d.csv"
    write_csv(path, ds)
    back = read_csv(path)
    np.testing.assert_array_equal(back.masks, ds.masks)
    np.testing.assert_allclose(back.x[ds.masks == 1], ds.x[ds.masks == 1], rtol=1e-12)
    assert back.x_hat is None


def test_mask_csv_and_load_dataset(tmp_path):
    x = np.arange(6.0).reshape(3, 2)
    masks = np.array([[1, 0], [1, 1], [0, 1]])
    write_csv(tmp_path / "x.csv", x)
    write_mask_csv(tmp_path / "m.csv", masks)
    np.testing.assert_array_equal(read_mask_csv(tmp_path / "m.csv"), masks)
    ds = load_dataset(tmp_path / "x.csv", tmp_path / "m.csv")
    np.testing.assert_array_equal(ds.masks, masks)
    np.testing.assert_array_equal(ds.x_hat, x)
    assert np.isnan(ds.x[0, 1])


def test_csv_parse_errors(tmp_path):
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("dim_0,col_b\n1,2\n")
    with pytest.raises(ParseError, match="byte offset 6"):
        read_csv(bad_header)
    ragged = tmp_path / "r.csv"
    ragged.write_text("dim_0,dim_1\n1,2\n3\n")
    with pytest.raises(ParseError, match="row 2"):
        read_csv(ragged)
    text = tmp_path / "t.csv"
    text.write_text("dim_0\nabc\n")
    with pytest.raises(ParseError):
        read_csv(text)


def test_idx_round_trip_and_shape(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (2, 28, 28), dtype=np.uint8)
    path = tmp_path / "img.idx.gz"
    write_idx(path, imgs)
    ds = load_idx(path)
    assert ds.x.shape == (2, 784) and ds.masks.all()
    np.testing.assert_array_equal(load_idx_raw(path), imgs.reshape(2, 784))
    assert ds.x.min() >= 0 and ds.x.max() <= 1


def test_idx_errors(tmp_path):
    labels = tmp_path / "labels"
    labels.write_bytes(struct.pack(">II", 0x801, 2) + b"\x00\x01")
    with pytest.raises(ParseError, match="magic"):
        load_idx(labels)
    short = tmp_path / "short.gz"
    short.write_bytes(gzip.compress(struct.pack(">IIII", 0x803, 2, 28, 28) + bytes(100)))
    with pytest.raises(ParseError, match="byte offset 16"):
        load_idx(short)


def test_dataset_rejects_mismatch():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((2, 2)), np.ones((2, 3), dtype=np.int8))


def test_mean_baseline_scales_with_square_of_pixel_range(tmp_path):
    rng = np.random.default_rng(5)
    write_idx(tmp_path / "train", rng.integers(0, 256, (30, 4, 4), dtype=np.uint8))
    write_idx(tmp_path / "test", rng.integers(0, 256, (10, 4, 4), dtype=np.uint8))
    raw = mean_baseline(load_idx_raw(tmp_path / "train"), load_idx_raw(tmp_path / "test"))
    unit = mean_baseline(load_idx(tmp_path / "train").x_hat, load_idx(tmp_path / "test").x_hat)
    assert raw == pytest.approx(unit * 255**2, rel=1e-12)
