"""scikit-learn style estimators.

Missing entries are given either as NaN in ``X`` or through an explicit
``mask`` argument (1 = observed, 0 = missing). ``transform`` returns posterior
means in latent space, ``inverse_transform`` decodes them, and ``impute``
fills the missing entries of ``X``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import checkpoint
from .data import Dataset
from .engine import ModelBundle, TrainConfig, infer, reconstruct, train
from .engine import impute as _impute
from .exceptions import DimensionError
from .models import PosteriorBank


def check_incomplete(X, mask=None, n_features: int | None = None):
    """Validate ``X`` (NaN allowed) and return ``(x, mask)``.

    Without ``mask`` the NaN pattern defines it. With ``mask``, entries it
    marks missing may hold anything; entries it marks observed must be finite.
    """
    X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
    if mask is None:
        mask = (~np.isnan(X)).astype(np.int8)
    else:
        mask = check_array(mask, dtype=None, ensure_all_finite=True)
        if mask.shape != X.shape:
            raise DimensionError(f"mask shape {mask.shape} does not match X {X.shape}")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        mask = mask.astype(np.int8)
        if np.isnan(X[mask == 1]).any():
            raise ValueError("mask marks NaN entries as observed")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"X has {X.shape[1]} features, model was fitted with {n_features}")
    return np.where(mask == 1, X, np.nan), mask


class _AEVBBase(TransformerMixin, BaseEstimator):
    _model_kind = ""

    def _config(self) -> TrainConfig:
        return TrainConfig(
            model_kind=self._model_kind,
            d_z=self.latent_dim,
            hidden=tuple(self.hidden_layer_sizes),
            encoder_hidden=getattr(self, "encoder_hidden_layer_sizes", None),
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
            lr_theta=self.learning_rate_decoder,
            lr_phi=self.learning_rate_posterior,
            mc_samples=self.mc_samples,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            elbo_mode=self.elbo,
            sigma_mode=self.sigma,
            lam=self.likelihood_var,
            rel_tol=self.tol,
            patience=self.patience,
            infer_max_steps=self.max_infer_steps,
            use_mask=getattr(self, "use_mask", True),
            seed=self.random_state,
        )

    def fit(self, X, y=None, mask=None, X_val=None, mask_val=None):
        """Train on incomplete ``X``; an optional validation set drives early stopping."""
        x, m = check_incomplete(X, mask)
        val = None
        if X_val is not None:
            vx, vm = check_incomplete(X_val, mask_val, x.shape[1])
            val = Dataset(vx, vm)
        result = train(Dataset(x, m), self._config(), val)
        self._set_fitted(result.bundle)
        self.training_curve_ = list(result.curve)
        self.validation_curve_ = list(result.val_curve)
        self.n_epochs_ = result.epochs
        self.posterior_ = result.posterior
        return self

    def _set_fitted(self, bundle: ModelBundle):
        self.bundle_ = bundle
        self.decoder_ = bundle.decoder
        self.n_features_in_ = bundle.d

    def infer(self, X, mask=None, init: PosteriorBank | None = None):
        """Posterior parameters for the rows of ``X`` and the achieved lower bound."""
        check_is_fitted(self, "bundle_")
        x, m = check_incomplete(X, mask, self.n_features_in_)
        return infer(self.bundle_, Dataset(x, m), init=init)

    def transform(self, X, mask=None):
        bank, _ = self.infer(X, mask)
        return bank.mu

    def inverse_transform(self, Z):
        check_is_fitted(self, "bundle_")
        Z = check_array(Z, dtype=np.float64)
        return reconstruct(self.bundle_, Z)

    def impute(self, X, mask=None):
        """Copy of ``X`` with missing entries replaced by the decoded posterior mean."""
        x, m = check_incomplete(X, mask, getattr(self, "n_features_in_", None))
        bank, _ = self.infer(x, m)
        return _impute(self.bundle_, bank, x, m)

    def score(self, X, y=None, mask=None):
        """Per-row lower bound after inference (higher is better)."""
        _, lb = self.infer(X, mask)
        return lb

    def save(self, path):
        check_is_fitted(self, "bundle_")
        checkpoint.save(path, self.bundle_)

    @classmethod
    def load(cls, path):
        bundle = checkpoint.load(path)
        cfg = bundle.config
        est = cls(
            latent_dim=cfg.d_z, hidden_layer_sizes=cfg.hidden, hidden_activation=cfg.hidden_activation,
            output_activation=cfg.output_activation, learning_rate_decoder=cfg.lr_theta,
            learning_rate_posterior=cfg.lr_phi, sigma=cfg.sigma_mode, elbo=cfg.elbo_mode,
            mc_samples=cfg.mc_samples, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
            tol=cfg.rel_tol, patience=cfg.patience, max_infer_steps=cfg.infer_max_steps,
            likelihood_var=cfg.lam, random_state=cfg.seed,
        )
        if cfg.model_kind != cls._model_kind:
            raise ValueError(f"checkpoint holds a {cfg.model_kind} model, not {cls._model_kind}")
        if cls._model_kind == "vae":
            est.set_params(encoder_hidden_layer_sizes=cfg.encoder_hidden, use_mask=cfg.use_mask)
        est._set_fitted(bundle)
        return est


class VariationalAutoDecoder(_AEVBBase):
    """Encoder-less AEVB: every training row owns free posterior parameters.

    Parameters
    ----------
    latent_dim : int
        Width of the latent space.
    hidden_layer_sizes : tuple of int
        Decoder hidden widths.
    sigma : float or "learnable"
        Fixed posterior standard deviation, or ``"learnable"`` to optimise
        ``log_sigma`` per row.
    elbo : {"recon_only", "full"}
        Keep only the expected log-likelihood, or subtract the KL to N(0, I).
    likelihood_var : float
        Variance of the Gaussian likelihood on observed entries.
    max_infer_steps : int
        Budget for test-time posterior optimisation.

    Attributes
    ----------
    posterior_ : PosteriorBank
        Learned per-row posteriors for the training data.
    training_curve_ : list of float
        Epoch-mean training lower bound.
    """

    _model_kind = "vad"

    def __init__(self, latent_dim=25, hidden_layer_sizes=(50, 50), hidden_activation="tanh",
                 output_activation="identity", learning_rate_decoder=1e-3,
                 learning_rate_posterior=1e-2, sigma=0.1, elbo="recon_only", mc_samples=1,
                 batch_size=500, max_epochs=600, tol=1e-4, patience=50, max_infer_steps=2000,
                 likelihood_var=1.0, random_state=0):
        self.latent_dim = latent_dim
        self.hidden_layer_sizes = hidden_layer_sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.learning_rate_decoder = learning_rate_decoder
        self.learning_rate_posterior = learning_rate_posterior
        self.sigma = sigma
        self.elbo = elbo
        self.mc_samples = mc_samples
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.tol = tol
        self.patience = patience
        self.max_infer_steps = max_infer_steps
        self.likelihood_var = likelihood_var
        self.random_state = random_state

    def fit_transform(self, X, y=None, mask=None, **fit_params):
        return self.fit(X, y, mask=mask, **fit_params).posterior_.mu


class VariationalAutoEncoder(_AEVBBase):
    """Encoder-based AEVB baseline.

    The encoder sees the input with missing entries replaced by zeros,
    concatenated with the mask (``use_mask=False`` drops the mask). Test-time
    posteriors come from a single encoder pass.
    """

    _model_kind = "vae"

    def __init__(self, latent_dim=25, hidden_layer_sizes=(50, 50), encoder_hidden_layer_sizes=None,
                 hidden_activation="tanh", output_activation="identity",
                 learning_rate_decoder=1e-3, learning_rate_posterior=1e-2, sigma=0.1,
                 elbo="recon_only", mc_samples=1, batch_size=500, max_epochs=600, tol=1e-4,
                 patience=50, max_infer_steps=2000, likelihood_var=1.0, use_mask=True,
                 random_state=0):
        self.latent_dim = latent_dim
        self.hidden_layer_sizes = hidden_layer_sizes
        self.encoder_hidden_layer_sizes = encoder_hidden_layer_sizes
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.learning_rate_decoder = learning_rate_decoder
        self.learning_rate_posterior = learning_rate_posterior
        self.sigma = sigma
        self.elbo = elbo
        self.mc_samples = mc_samples
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.tol = tol
        self.patience = patience
        self.max_infer_steps = max_infer_steps
        self.likelihood_var = likelihood_var
        self.use_mask = use_mask
        self.random_state = random_state
