import hashlib
import math

import numpy as np
import pytest

from vad.data import SyntheticConfig, apply_mask, gen_synthetic, sample_mcar, split
from vad.engine import (
    TrainConfig,
    build_bundle,
    eval_mse,
    evaluate,
    impute,
    infer,
    reconstruct,
    train,
)
from vad.exceptions import ConfigError, DimensionError
from vad.experiments import (
    _score,
    experiment1,
    experiment2,
    read_metrics_csv,
    summarise,
    write_metrics_csv,
)
from vad.models import DecoderMLP, PosteriorBank

TINY = dict(d_z=3, hidden=(8,), batch_size=32, max_epochs=15, patience=5, infer_max_steps=60)


@pytest.fixture(scope="module")
def small():
    return gen_synthetic(SyntheticConfig(n=160, d=8, n_independent=4, seed=1))


def masked(ds, r, seed):
    return ds.with_masks(sample_mcar(ds.n, ds.d, r, seed))


def param_hash(bundle):
    h = hashlib.sha256()
    for p in bundle.decoder.params:
        h.update(p.tobytes())
    return h.hexdigest()


def test_config_validation_and_round_trip():
    cfg = TrainConfig(**TINY, sigma_mode="learnable")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig(model_kind="gan")
    with pytest.raises(ConfigError):
        TrainConfig(lr_theta=0.0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"depth": 3})


def test_train_increases_lower_bound_on_realizable_problem():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 3))
    ds = apply_mask(x, np.ones_like(x, dtype=np.int8))
    cfg = TrainConfig(d_z=3, hidden=(), max_epochs=40, batch_size=25, patience=40, sigma_mode=0.05)
    result = train(ds, cfg)
    assert result.curve[-1] > result.curve[0]
    best = np.maximum.accumulate(result.curve)
    assert np.all(np.diff(best) >= 0)


@pytest.mark.parametrize("kind", ["vad", "vae"])
def test_all_missing_leaves_decoder_unchanged(small, kind):
    ds = masked(small, 1.0, 0)
    cfg = TrainConfig(model_kind=kind, **TINY)
    before = build_bundle(cfg, ds.d)
    result = train(ds, cfg)
    assert param_hash(result.bundle) == param_hash(before)
    assert result.curve == [0.0] * result.epochs


@pytest.mark.parametrize("kind", ["vad", "vae"])
def test_mask_blindness_is_bitwise(small, kind):
    ds = masked(small, 0.4, 3)
    garbage = np.where(ds.masks == 1, ds.x, 1e6)
    noisy = type(ds)(garbage, ds.masks, None)
    cfg = TrainConfig(model_kind=kind, **TINY)
    a, b = train(ds, cfg), train(noisy, cfg)
    assert a.curve == b.curve
    assert param_hash(a.bundle) == param_hash(b.bundle)


def test_train_is_deterministic(small):
    cfg = TrainConfig(**TINY)
    a, b = train(masked(small, 0.3, 1), cfg), train(masked(small, 0.3, 1), cfg)
    assert a.curve == b.curve
    assert a.posterior.mu.tobytes() == b.posterior.mu.tobytes()


def test_train_empty_dataset_errors():
    ds = apply_mask(np.zeros((0, 3)), np.zeros((0, 3)))
    with pytest.raises(ConfigError):
        train(ds, TrainConfig(**TINY))


def test_vad_inference_freezes_decoder(small):
    result = train(masked(small, 0.3, 2), TrainConfig(**TINY))
    before = param_hash(result.bundle)
    infer(result.bundle, masked(small, 0.3, 5))
    assert param_hash(result.bundle) == before


def test_vad_reinference_from_trained_bank(small):
    ds = masked(small, 0.3, 2)
    cfg = TrainConfig(**{**TINY, "max_epochs": 60, "patience": 60, "sigma_mode": 0.01})
    result = train(ds, cfg)
    _, lb = infer(result.bundle, ds, init=result.posterior)
    tol = cfg.rel_tol * (1 + abs(result.curve[-1]))
    assert lb >= result.curve[-1] - tol


def test_vae_inference_is_deterministic(small):
    ds = masked(small, 0.3, 2)
    result = train(ds, TrainConfig(model_kind="vae", **TINY))
    a, _ = infer(result.bundle, ds)
    b, _ = infer(result.bundle, ds)
    assert a.mu.tobytes() == b.mu.tobytes()


def test_infer_width_mismatch(small):
    result = train(masked(small, 0.3, 2), TrainConfig(**TINY))
    with pytest.raises(DimensionError):
        infer(result.bundle, masked(gen_synthetic(SyntheticConfig(n=10, d=5, n_independent=4)), 0.2, 0))


def identity_bundle(d):
    bundle = build_bundle(TrainConfig(d_z=d, hidden=()), d)
    bundle.decoder = DecoderMLP([d, d], [np.eye(d), np.zeros(d)], "tanh", "identity")
    return bundle


def test_impute_examples():
    bundle = identity_bundle(2)
    post = PosteriorBank(np.array([[0.9, 0.4]]), np.zeros((1, 2)))
    x = np.array([[1.0, np.nan]])
    np.testing.assert_array_equal(impute(bundle, post, x, [[1, 0]]), [[1.0, 0.4]])
    np.testing.assert_array_equal(impute(bundle, post, [[3.0, 4.0]], [[1, 1]]), [[3.0, 4.0]])
    np.testing.assert_array_equal(impute(bundle, post, x, [[0, 0]]), [[0.9, 0.4]])
    np.testing.assert_array_equal(reconstruct(bundle, [0.9, 0.4]), [[0.9, 0.4]])


def test_eval_mse_examples():
    assert eval_mse([[1, 2]], [[1, 4]], [[1, 0]]) == (0.0, 4.0, 2.0)
    assert eval_mse([[1, 2]], [[1, 2]], [[1, 0]]) == (0.0, 0.0, 0.0)
    inc, miss, full = eval_mse([[1.0, 2.0]], [[0.0, 4.0]], [[1, 1]])
    assert math.isnan(miss) and full == inc == 2.5
    with pytest.raises(DimensionError):
        eval_mse([[1.0]], [[1.0, 2.0]], [[1, 1]])


def test_evaluate_needs_ground_truth(small):
    result = train(masked(small, 0.3, 2), TrainConfig(**TINY))
    ds = masked(small, 0.3, 2)
    with pytest.raises(ConfigError):
        evaluate(result.bundle, type(ds)(ds.x, ds.masks, None), result.posterior)


def test_experiment1_bookkeeping_and_category_consistency(small, tmp_path):
    cfg = TrainConfig(**TINY)
    records = experiment1(small, cfg, r_grid=(0.3, 0.6), n_test_runs=2, timing=False)
    assert len(records) == 3 * 2 * 2
    assert {r.r_train for r in records} == {0.0, 0.3, 0.6}
    for rec in records:
        assert rec.r_train == rec.r_test
        if rec.r_test == 0.0:
            assert math.isnan(rec.mse_missing) and rec.mse_full == rec.mse_incomplete
    path = tmp_path / "m.csv"
    write_metrics_csv(path, records)
    back = read_metrics_csv(path)
    assert [r.mse_full for r in back] == [r.mse_full for r in records]
    assert all(r.seconds is None for r in back)


def test_category_consistency_identity():
    rng = np.random.default_rng(0)
    dec, truth = rng.normal(size=(40, 6)), rng.normal(size=(40, 6))
    masks = sample_mcar(40, 6, 0.35, 1)
    inc, miss, full = eval_mse(dec, truth, masks)
    f_obs = masks.mean()
    assert full == pytest.approx(f_obs * inc + (1 - f_obs) * miss, abs=1e-12)


def test_experiment2_test_only_zero_matches_experiment1(small):
    cfg = TrainConfig(**TINY)
    e1 = experiment1(small, cfg, r_grid=(), n_test_runs=2, timing=False)
    e2 = experiment2(small, "test_only", cfg, r_grid=(), n_test_runs=2, timing=False)
    assert e1 == e2


def test_experiment2_modes(small):
    cfg = TrainConfig(**TINY)
    recs = experiment2(small, "train_only", cfg, r_grid=(0.5,), n_test_runs=1, include_zero=False)
    assert {(r.r_train, r.r_test) for r in recs} == {(0.5, 0.0)}
    assert all(r.seconds is not None and r.seconds > 0 for r in recs)
    with pytest.raises(ConfigError):
        experiment2(small, "both", cfg)


@pytest.mark.slow
def test_vad_beats_vae_on_validation_incomplete_mse():
    """Desk-scale synthetic at r=0.5, five model seeds."""
    source = gen_synthetic(SyntheticConfig(seed=0))
    train_ds, val_ds, _ = split(source, seed=0)
    train_m, val_m = masked(train_ds, 0.5, 10), masked(val_ds, 0.5, 11)
    for seed in range(5):
        scores = {}
        for kind in ("vad", "vae"):
            result = train(train_m, TrainConfig(model_kind=kind, seed=seed), val_m)
            scores[kind] = -_score(result, val_m, "mse_incomplete")
        assert scores["vad"] <= scores["vae"], (seed, scores)


@pytest.mark.slow
def test_experiment2_vad_stable_across_test_rates():
    source = gen_synthetic(SyntheticConfig(seed=0))
    recs = experiment2(source, "test_only", TrainConfig(), r_grid=(0.1, 0.8), models=("vad",),
                       include_zero=False)
    full = summarise(recs)
    lo, hi = full[("vad", 0.0, 0.1)], full[("vad", 0.0, 0.8)]
    assert max(lo, hi) < 2 * min(lo, hi)
