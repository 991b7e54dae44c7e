"""Gaussian pieces of the variational lower bound.

Everything here operates on tape tensors so gradients flow back to the
decoder, the per-datapoint posterior parameters, or the encoder. Inputs may
be single vectors or ``[n, d]`` batches; scalar results are summed over the
batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import DimensionError, InvalidCovarianceError, InvalidKLError
from .tensor import Tape, Tensor

LOG_2PI = math.log(2.0 * math.pi)
LOWER_BOUND_MODES = ("full", "recon_only")


@dataclass
class DiagGaussianParams:
    """Mean and log standard deviation of a diagonal Gaussian.

    Either field may be a :class:`Tensor` (to differentiate through it) or a
    plain array.
    """

    mu: "Tensor | np.ndarray"
    log_sigma: "Tensor | np.ndarray"

    def __post_init__(self):
        if _shape(self.mu) != _shape(self.log_sigma):
            raise DimensionError(
                f"mu {_shape(self.mu)} and log_sigma {_shape(self.log_sigma)} differ in shape")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(_data(self.log_sigma))


@dataclass
class MaskedLikelihoodSpec:
    """Observation mask (1 = observed, 0 = missing) and per-dimension variance."""

    mask: np.ndarray
    lam: "float | np.ndarray" = 1.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask)
        observed = self.mask == 1
        if not (observed | (self.mask == 0)).all():
            raise ValueError("mask entries must be 0 or 1")
        lam = np.broadcast_to(np.asarray(self.lam, dtype=np.float64), self.mask.shape)
        if np.any(lam[observed] <= 0):
            raise InvalidCovarianceError("likelihood variance must be positive on observed dims")
        safe_lam = np.where(observed, lam, 1.0)
        self._observed = observed
        self._weight = np.where(observed, -0.5 / safe_lam, 0.0)
        self._log_norm = np.where(observed, -0.5 * (LOG_2PI + np.log(safe_lam)), 0.0)


def _shape(x):
    return x.shape if isinstance(x, Tensor) else np.shape(x)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _on_tape(q: DiagGaussianParams, tape: Tape | None = None) -> tuple[Tensor, Tensor]:
    if tape is None:
        tape = next((v.tape for v in (q.mu, q.log_sigma) if isinstance(v, Tensor)), None) or Tape()
    mu = q.mu if isinstance(q.mu, Tensor) else tape.constant(q.mu)
    log_sigma = q.log_sigma if isinstance(q.log_sigma, Tensor) else tape.constant(q.log_sigma)
    return mu, log_sigma


def reparameterize(q: DiagGaussianParams, eps) -> Tensor:
    """z = mu + eps * exp(log_sigma); ``eps`` is standard-normal noise."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != _shape(q.mu):
        raise DimensionError(f"noise shape {eps.shape} does not match posterior {_shape(q.mu)}")
    mu, log_sigma = _on_tape(q)
    return mu + T.exp(log_sigma) * eps


def masked_gauss_loglik(decoded: Tensor, x, spec: MaskedLikelihoodSpec,
                        per_row: bool = False) -> Tensor:
    """Diagonal Gaussian log-likelihood of ``x`` around ``decoded`` on observed dims.

    Missing dimensions are marginalised out: they contribute exactly zero and
    their values in ``x`` (NaN or anything else) are never read. With
    ``per_row=True`` a ``[n]`` tensor of row totals is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    if decoded.shape != x.shape or spec.mask.shape != x.shape:
        raise DimensionError(
            f"decoded {decoded.shape}, x {x.shape} and mask {spec.mask.shape} must match")
    x_obs = np.where(spec._observed, x, 0.0)
    weight, log_norm = spec._weight, spec._log_norm

    diff = decoded - x_obs
    terms = diff * diff * weight
    if per_row and x.ndim == 2:
        return terms.sum("rows") + log_norm.sum(axis=1)
    return terms.sum() + float(log_norm.sum())


def kl_to_std_normal(q: DiagGaussianParams) -> Tensor:
    """KL(N(mu, diag(sigma^2)) || N(0, I)), summed over all entries.

    Written as 0.5 * (expm1(2 log_sigma) - 2 log_sigma + mu^2) so each term
    stays non-negative in floating point near sigma = 1.
    """
    mu, log_sigma = _on_tape(q)
    two_ls = T.scale(log_sigma, 2.0)
    terms = T.expm1(two_ls) - two_ls + mu * mu
    return T.scale(terms.sum(), 0.5)


def lower_bound(recon, kl, mode: str = "recon_only"):
    """Combine the reconstruction term and the KL term.

    ``full`` gives ``recon - kl``; ``recon_only`` keeps just the expected
    log-likelihood term. Works on tensors and on plain floats.
    """
    if mode not in LOWER_BOUND_MODES:
        raise ValueError(f"unknown lower-bound mode {mode!r}")
    kl_value = kl.item() if isinstance(kl, Tensor) else float(kl)
    if kl_value < 0:
        raise InvalidKLError(f"KL term must be non-negative, got {kl_value}")
    if mode == "recon_only":
        return recon
    return recon - kl
