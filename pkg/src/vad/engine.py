"""Training and inference loops for the auto-decoder and the auto-encoder baseline.

Both model kinds maximise the same Monte-Carlo lower bound. They differ only
in where the approximate posterior comes from: the auto-decoder (``vad``)
keeps free per-row parameters in a :class:`PosteriorBank`, the auto-encoder
(``vae``) predicts them from the zero-filled input and its mask.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .data import Dataset
from .distributions import (
    DiagGaussianParams,
    MaskedLikelihoodSpec,
    kl_to_std_normal,
    lower_bound,
    masked_gauss_loglik,
    reparameterize,
)
from .exceptions import ConfigError, DimensionError, NumericError
from .models import (
    DecoderMLP,
    EncoderMLP,
    PosteriorBank,
    decode,
    encode,
    init_decoder,
    init_encoder,
    init_posterior_bank,
    parse_sigma_mode,
    register,
)
from .optim import STOP, AdamState, PlateauState, RowAdamState, adam_step, adam_step_rows, plateau_check
from .tensor import Tape

logger = logging.getLogger(__name__)

MODEL_KINDS = ("vad", "vae")


@dataclass
class TrainConfig:
    """Training options. Defaults are the desk-scale settings used by the experiments."""

    model_kind: str = "vad"
    d_z: int = 25
    hidden: tuple[int, ...] = (50, 50)
    encoder_hidden: tuple[int, ...] | None = None
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    lr_theta: float = 1e-3
    lr_phi: float = 1e-2
    mc_samples: int = 1
    batch_size: int = 500
    max_epochs: int = 600
    elbo_mode: str = "recon_only"
    sigma_mode: "str | float" = 0.1
    lam: float = 1.0
    rel_tol: float = 1e-4
    patience: int = 50
    val_steps_per_epoch: int = 2
    infer_max_steps: int = 2000
    infer_lr: float | None = None
    use_mask: bool = True
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.encoder_hidden is not None:
            self.encoder_hidden = tuple(int(h) for h in self.encoder_hidden)
        self.validate()

    def validate(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.d_z < 1:
            raise ConfigError("d_z must be >= 1")
        if self.elbo_mode not in ("full", "recon_only"):
            raise ConfigError(f"unknown elbo mode {self.elbo_mode!r}")
        for name in ("lr_theta", "lr_phi", "lam", "rel_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("mc_samples", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_epochs < 0 or self.infer_max_steps < 0 or self.val_steps_per_epoch < 0:
            raise ConfigError("epoch and step budgets must be non-negative")
        parse_sigma_mode(self.sigma_mode)

    @property
    def sigma0(self) -> float | None:
        return parse_sigma_mode(self.sigma_mode)

    @property
    def encoder_layers(self) -> tuple[int, ...]:
        return self.hidden[::-1] if self.encoder_hidden is None else self.encoder_hidden

    def decoder_dims(self, d: int) -> list[int]:
        return [self.d_z, *self.hidden, d]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        if self.encoder_hidden is not None:
            out["encoder_hidden"] = list(self.encoder_hidden)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class ModelBundle:
    config: TrainConfig
    decoder: DecoderMLP
    encoder: EncoderMLP | None = None

    @property
    def d(self) -> int:
        return self.decoder.d

    def n_params(self) -> int:
        return self.decoder.n_params() + (self.encoder.n_params() if self.encoder else 0)


@dataclass
class TrainResult:
    bundle: ModelBundle
    posterior: PosteriorBank | None
    curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    epochs: int = 0
    val_posterior: PosteriorBank | None = None


@dataclass
class MetricsRecord:
    model: str
    r_train: float
    r_test: float
    seed: int
    mse_incomplete: float
    mse_missing: float
    mse_full: float
    lower_bound: float
    seconds: float | None = None
    mean_baseline: float | None = None


def _batch_lower_bound(bundle: ModelBundle, dec_leaves, q: DiagGaussianParams, x, mask,
                       rng: np.random.Generator):
    """Monte-Carlo lower bound averaged over the rows of one batch."""
    cfg = bundle.config
    n = x.shape[0]
    spec = MaskedLikelihoodSpec(mask, cfg.lam)
    recon = None
    for _ in range(cfg.mc_samples):
        z = reparameterize(q, rng.standard_normal(q.mu.shape))
        ll = masked_gauss_loglik(decode(bundle.decoder, z, dec_leaves), x, spec)
        recon = ll if recon is None else recon + ll
    recon = T.scale(recon, 1.0 / (cfg.mc_samples * n))
    if cfg.elbo_mode == "recon_only":
        return lower_bound(recon, 0.0, "recon_only")
    kl = T.scale(kl_to_std_normal(q), 1.0 / n)
    return lower_bound(recon, kl, "full")


def _encoder_posterior(bundle: ModelBundle, enc_leaves, x, mask) -> DiagGaussianParams:
    q = encode(bundle.encoder, x, mask, leaves=enc_leaves)
    sigma0 = bundle.config.sigma0
    if sigma0 is not None:
        tape = enc_leaves[0].tape
        q = DiagGaussianParams(q.mu, tape.constant(np.full(q.mu.shape, math.log(sigma0))))
    return q


def _check_data(ds: Dataset, d: int | None = None) -> None:
    if ds.n == 0:
        raise ConfigError("empty dataset")
    if d is not None and ds.d != d:
        raise DimensionError(f"model expects {d} features, data has {ds.d}")


def build_bundle(cfg: TrainConfig, d: int) -> ModelBundle:
    decoder = init_decoder(cfg.decoder_dims(d), cfg.hidden_activation, cfg.output_activation,
                           rng_seed=cfg.seed)
    encoder = None
    if cfg.model_kind == "vae":
        encoder = init_encoder(d, list(cfg.encoder_layers), cfg.d_z, cfg.hidden_activation,
                               cfg.use_mask, rng_seed=cfg.seed + 1)
    return ModelBundle(cfg, decoder, encoder)


def train(dataset: Dataset, cfg: TrainConfig, val: Dataset | None = None) -> TrainResult:
    """Maximise the lower bound jointly over decoder and posterior parameters.

    Each epoch visits the rows in a fresh random order in mini-batches. The
    decoder takes one Adam step per batch from the batch-mean bound; for the
    auto-decoder only the batch members' posterior rows move. Training stops
    at ``max_epochs`` or once the monitored bound plateaus (validation bound
    when ``val`` is given, otherwise the epoch-mean training bound).
    """
    _check_data(dataset)
    if val is not None:
        _check_data(val, dataset.d)
    bundle = build_bundle(cfg, dataset.d)
    rng = np.random.default_rng([cfg.seed, 17])
    n = dataset.n
    x, masks = dataset.x, dataset.masks
    theta = list(bundle.decoder.params)
    theta_state = AdamState(lr=cfg.lr_theta)
    bank = None
    if cfg.model_kind == "vad":
        bank = init_posterior_bank(n, cfg.d_z, cfg.sigma_mode,
                                   rng_seed=cfg.seed + 2)
        mu_state = RowAdamState.zeros(bank.mu.shape, cfg.lr_phi)
        ls_state = RowAdamState.zeros(bank.mu.shape, cfg.lr_phi)
    else:
        phi = list(bundle.encoder.params)
        phi_state = AdamState(lr=cfg.lr_phi)

    val_bank = val_states = None
    if val is not None and cfg.model_kind == "vad":
        val_bank = init_posterior_bank(val.n, cfg.d_z, cfg.sigma_mode,
                                       rng_seed=cfg.seed + 3)
        val_states = (RowAdamState.zeros(val_bank.mu.shape, _infer_lr(cfg)),
                      RowAdamState.zeros(val_bank.mu.shape, _infer_lr(cfg)))
    val_rng = np.random.default_rng([cfg.seed, 23])

    result = TrainResult(bundle, bank, val_posterior=val_bank)
    plateau = PlateauState(cfg.rel_tol, cfg.patience)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            xb, mb = x[rows], masks[rows]
            tape = Tape()
            dec_leaves = register(tape, theta)
            try:
                if bank is not None:
                    mu = tape.tensor(bank.mu[rows], requires_grad=True)
                    ls = tape.tensor(bank.log_sigma[rows], requires_grad=not bank.fixed)
                    lb = _batch_lower_bound(bundle, dec_leaves, DiagGaussianParams(mu, ls), xb, mb, rng)
                else:
                    enc_leaves = register(tape, phi)
                    q = _encoder_posterior(bundle, enc_leaves, xb, mb)
                    lb = _batch_lower_bound(bundle, dec_leaves, q, xb, mb, rng)
                tape.backward(-lb)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch at row {start}: {exc}") from exc
            adam_step(theta, [leaf.grad for leaf in dec_leaves], theta_state)
            if bank is not None:
                adam_step_rows(bank.mu, mu.grad, rows, mu_state)
                if not bank.fixed:
                    adam_step_rows(bank.log_sigma, ls.grad, rows, ls_state)
            else:
                adam_step(phi, [leaf.grad for leaf in enc_leaves], phi_state)
            total += lb.item() * len(rows)
        result.curve.append(total / n)
        result.epochs = epoch + 1

        monitored = result.curve[-1]
        if val is not None:
            if val_bank is not None:
                monitored = _optimise_bank(bundle, val, val_bank, val_states, cfg.val_steps_per_epoch,
                                           val_rng)
            else:
                monitored = _evaluate_bound(bundle, val, _encode_bank(bundle, val), val_rng)
            result.val_curve.append(monitored)
        logger.debug("epoch %d: train %.5f monitored %.5f", epoch, result.curve[-1], monitored)
        if plateau_check(plateau, monitored) == STOP:
            break
    return result


def _infer_lr(cfg: TrainConfig) -> float:
    return cfg.infer_lr if cfg.infer_lr is not None else cfg.lr_phi


def _optimise_bank(bundle: ModelBundle, ds: Dataset, bank: PosteriorBank, states, steps: int,
                   rng: np.random.Generator, plateau: PlateauState | None = None) -> float:
    """Full-batch Adam on the posterior rows only; the decoder stays constant."""
    rows = np.arange(ds.n)
    lb_value = math.nan
    for step in range(steps):
        tape = Tape()
        dec_leaves = register(tape, bundle.decoder.params, requires_grad=False)
        mu = tape.tensor(bank.mu, requires_grad=True)
        ls = tape.tensor(bank.log_sigma, requires_grad=not bank.fixed)
        try:
            lb = _batch_lower_bound(bundle, dec_leaves, DiagGaussianParams(mu, ls), ds.x, ds.masks, rng)
        except NumericError as exc:
            raise NumericError(f"inference step {step}: {exc}") from exc
        tape.backward(-lb)
        adam_step_rows(bank.mu, mu.grad, rows, states[0])
        if not bank.fixed:
            adam_step_rows(bank.log_sigma, ls.grad, rows, states[1])
        lb_value = lb.item()
        if plateau is not None and plateau_check(plateau, lb_value) == STOP:
            break
    if steps == 0:
        lb_value = _evaluate_bound(bundle, ds, bank, rng)
    return lb_value


def _encode_bank(bundle: ModelBundle, ds: Dataset) -> PosteriorBank:
    tape = Tape()
    q = _encoder_posterior(bundle, register(tape, bundle.encoder.params, requires_grad=False),
                           ds.x, ds.masks)
    return PosteriorBank(q.mu.data.copy(), q.log_sigma.data.copy(), bundle.config.sigma0)


def _evaluate_bound(bundle: ModelBundle, ds: Dataset, bank: PosteriorBank,
                    rng: np.random.Generator) -> float:
    tape = Tape()
    dec_leaves = register(tape, bundle.decoder.params, requires_grad=False)
    q = DiagGaussianParams(tape.constant(bank.mu), tape.constant(bank.log_sigma))
    return _batch_lower_bound(bundle, dec_leaves, q, ds.x, ds.masks, rng).item()


def infer(bundle: ModelBundle, ds: Dataset, init: PosteriorBank | None = None,
          max_steps: int | None = None, seed: int | None = None) -> tuple[PosteriorBank, float]:
    """Posterior parameters for new rows with the decoder held fixed.

    The auto-decoder optimises a fresh bank (or a copy of ``init``) until the
    bound plateaus or ``max_steps`` is hit. The auto-encoder does a single
    encoder pass. Returns the bank and the achieved per-row lower bound.
    """
    _check_data(ds, bundle.d)
    cfg = bundle.config
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng([seed, 29])
    if cfg.model_kind == "vae":
        bank = _encode_bank(bundle, ds)
        return bank, _evaluate_bound(bundle, ds, bank, rng)
    if init is not None:
        if init.mu.shape != (ds.n, cfg.d_z):
            raise DimensionError(f"initial bank {init.mu.shape} vs {ds.n} rows of width {cfg.d_z}")
        bank = PosteriorBank(init.mu.copy(), init.log_sigma.copy(), init.sigma0)
    else:
        bank = init_posterior_bank(ds.n, cfg.d_z, cfg.sigma_mode,
                                   rng_seed=seed + 4)
    states = (RowAdamState.zeros(bank.mu.shape, _infer_lr(cfg)),
              RowAdamState.zeros(bank.mu.shape, _infer_lr(cfg)))
    steps = cfg.infer_max_steps if max_steps is None else max_steps
    plateau = PlateauState(cfg.rel_tol, cfg.patience)
    lb = _optimise_bank(bundle, ds, bank, states, steps, rng, plateau)
    return bank, lb


def reconstruct(bundle: ModelBundle, mu) -> np.ndarray:
    """Decoded mean for each row of posterior means."""
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim == 1:
        mu = mu[None, :]
    return decode(bundle.decoder, mu).data.copy()


def impute(bundle: ModelBundle, posterior, x, mask) -> np.ndarray:
    """Keep observed entries of ``x``; fill the missing ones from the decoded mean."""
    mu = posterior.mu.data if hasattr(posterior.mu, "data") else posterior.mu
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask)
    if x.shape != mask.shape:
        raise DimensionError(f"x {x.shape} and mask {mask.shape} differ")
    decoded = reconstruct(bundle, mu).reshape(x.shape)
    return np.where(mask == 1, x, decoded)


def eval_mse(decoded, x_hat, masks) -> tuple[float, float, float]:
    """Per-entry MSE over observed entries, missing entries, and all entries.

    A category with no entries is reported as NaN.
    """
    decoded = np.asarray(decoded, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    masks = np.asarray(masks)
    if not decoded.shape == x_hat.shape == masks.shape:
        raise DimensionError(f"shapes differ: {decoded.shape}, {x_hat.shape}, {masks.shape}")
    sq = (decoded - x_hat) ** 2
    observed = masks == 1

    def _mean(sel):
        return float(sq[sel].mean()) if sel.any() else math.nan

    return _mean(observed), _mean(~observed), _mean(np.ones_like(observed))


def evaluate(bundle: ModelBundle, ds: Dataset, bank: PosteriorBank) -> tuple[float, float, float]:
    if ds.x_hat is None:
        raise ConfigError("evaluation needs the ground truth")
    return eval_mse(reconstruct(bundle, bank.mu), ds.x_hat, ds.masks)


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start
