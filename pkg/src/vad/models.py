"""Decoder network, per-datapoint posterior bank, and the amortising encoder.

Parameters live as plain float64 arrays on the model objects. For each
optimisation step they are registered on a fresh tape with :func:`register`;
the resulting leaves carry the gradients back to the optimiser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .distributions import DiagGaussianParams
from .exceptions import ConfigError, DimensionError
from .tensor import Tape, Tensor

OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _dense_stack(rng, dims):
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(glorot_uniform(rng, fan_in, fan_out))
        params.append(np.zeros(fan_out))
    return params


def _forward(h: Tensor, leaves, activations) -> Tensor:
    for (w, b), act in zip(zip(leaves[::2], leaves[1::2]), activations):
        h = T.activation(act, h @ w + b)
    return h


def register(tape: Tape, params, requires_grad: bool = True) -> list[Tensor]:
    """Put every parameter array on ``tape`` as a leaf."""
    return [tape.tensor(p, requires_grad=requires_grad) for p in params]


@dataclass
class DecoderMLP:
    """Feedforward decoder ``[d_z, h_1, ..., d]``.

    ``params`` alternates weight ``[fan_in, fan_out]`` and bias ``[fan_out]``
    per layer, in layer order.
    """

    layer_dims: list[int]
    params: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    @property
    def d_z(self) -> int:
        return self.layer_dims[0]

    @property
    def d(self) -> int:
        return self.layer_dims[-1]

    @property
    def activations(self) -> list[str]:
        n_layers = len(self.layer_dims) - 1
        return [self.hidden_activation] * (n_layers - 1) + [self.output_activation]

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def _check_dims(layer_dims) -> list[int]:
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least input and output widths, got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer widths must be >= 1, got {dims}")
    return dims


def _check_activations(hidden: str, output: str) -> None:
    if hidden not in T.ACTIVATIONS:
        raise ConfigError(f"unknown hidden activation {hidden!r}")
    if output not in OUTPUT_ACTIVATIONS:
        raise ConfigError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")


def init_decoder(layer_dims, hidden_activation: str = "tanh",
                 output_activation: str = "identity", rng_seed: int = 0) -> DecoderMLP:
    """Glorot-uniform weights, zero biases, deterministic in ``rng_seed``."""
    dims = _check_dims(layer_dims)
    _check_activations(hidden_activation, output_activation)
    rng = np.random.default_rng(rng_seed)
    return DecoderMLP(dims, _dense_stack(rng, dims), hidden_activation, output_activation)


def decode(m: DecoderMLP, z, leaves: list[Tensor] | None = None) -> Tensor:
    """Batched forward pass ``[n, d_z] -> [n, d]``.

    Without ``leaves`` the parameters go on the tape as constants, so nothing
    flows back into the decoder.
    """
    if not isinstance(z, Tensor):
        z = Tape().tensor(np.asarray(z, dtype=np.float64))
    if z.data.ndim != 2 or z.shape[1] != m.d_z:
        raise DimensionError(f"decoder expects [n, {m.d_z}] input, got {z.shape}")
    if leaves is None:
        leaves = register(z.tape, m.params, requires_grad=False)
    return _forward(z, leaves, m.activations)


@dataclass
class PosteriorBank:
    """One diagonal Gaussian per datapoint.

    ``sigma0`` set means fixed-variance mode: ``log_sigma`` is pinned at
    ``ln(sigma0)`` and never updated.
    """

    mu: np.ndarray
    log_sigma: np.ndarray
    sigma0: float | None = None

    @property
    def fixed(self) -> bool:
        return self.sigma0 is not None

    def __len__(self) -> int:
        return self.mu.shape[0]

    @property
    def d_z(self) -> int:
        return self.mu.shape[1]

    def rows(self, idx) -> DiagGaussianParams:
        return DiagGaussianParams(self.mu[idx], self.log_sigma[idx])


def init_posterior_bank(n: int, d_z: int, sigma_mode="learnable", rng_seed: int = 0,
                        mu_scale: float = 0.01, init_sigma: float = 0.1) -> PosteriorBank:
    """Means ~ N(0, mu_scale^2); ``sigma_mode`` is ``"learnable"`` or a fixed sigma."""
    if n < 1 or d_z < 1:
        raise ConfigError(f"posterior bank needs n >= 1 and d_z >= 1, got {n}, {d_z}")
    sigma0 = parse_sigma_mode(sigma_mode)
    rng = np.random.default_rng(rng_seed)
    mu = rng.normal(0.0, mu_scale, size=(n, d_z))
    start = init_sigma if sigma0 is None else sigma0
    return PosteriorBank(mu, np.full((n, d_z), math.log(start)), sigma0)


def parse_sigma_mode(sigma_mode) -> float | None:
    """``"learnable"`` -> None; a positive number or ``"fixed:0.1"`` -> that sigma."""
    if sigma_mode is None or sigma_mode == "learnable":
        return None
    if isinstance(sigma_mode, str):
        if not sigma_mode.startswith("fixed"):
            raise ConfigError(f"unknown sigma mode {sigma_mode!r}")
        sigma_mode = sigma_mode.split(":", 1)[-1].strip("()")
    try:
        sigma0 = float(sigma_mode)
    except ValueError as exc:
        raise ConfigError(f"bad fixed sigma {sigma_mode!r}") from exc
    if not sigma0 > 0 or not math.isfinite(sigma0):
        raise ConfigError(f"fixed sigma must be positive, got {sigma0}")
    return sigma0


@dataclass
class EncoderMLP:
    """Shared trunk followed by a mean head and a log-sigma head.

    With ``use_mask`` the input is ``concat(x_zero_filled, mask)`` (width
    ``2d``); otherwise just the zero-filled ``x``.
    """

    d: int
    layer_dims: list[int]
    params: list[np.ndarray]
    hidden_activation: str = "tanh"
    use_mask: bool = True
    n_trunk: int = field(default=0)

    @property
    def d_z(self) -> int:
        return self.params[-1].shape[0]

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def init_encoder(d: int, hidden: list[int], d_z: int, hidden_activation: str = "tanh",
                 use_mask: bool = True, rng_seed: int = 0) -> EncoderMLP:
    if d < 1 or d_z < 1:
        raise ConfigError("encoder needs d >= 1 and d_z >= 1")
    _check_activations(hidden_activation, "identity")
    in_width = 2 * d if use_mask else d
    trunk_dims = _check_dims([in_width, *hidden]) if hidden else [in_width]
    rng = np.random.default_rng(rng_seed)
    trunk = _dense_stack(rng, trunk_dims)
    heads = _dense_stack(rng, [trunk_dims[-1], d_z]) + _dense_stack(rng, [trunk_dims[-1], d_z])
    return EncoderMLP(d, trunk_dims, trunk + heads, hidden_activation, use_mask, len(trunk))


def encoder_input(x, mask, use_mask: bool = True) -> np.ndarray:
    """Zero-fill missing entries, then append the mask."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask)
    if x.shape != mask.shape:
        raise DimensionError(f"x {x.shape} and mask {mask.shape} differ in shape")
    filled = np.where(mask == 1, x, 0.0)
    if not use_mask:
        return filled
    return np.concatenate([filled, mask.astype(np.float64)], axis=-1)


def encode(e: EncoderMLP, x_incomplete, mask, leaves: list[Tensor] | None = None,
           tape: Tape | None = None) -> DiagGaussianParams:
    """Amortised posterior for each row of ``x_incomplete``.

    Accepts a single vector or an ``[n, d]`` batch; the returned parameters
    are tensors shaped ``[n, d_z]``.
    """
    inp = encoder_input(x_incomplete, mask, e.use_mask)
    if inp.ndim == 1:
        inp = inp[None, :]
    if inp.shape[1] != e.layer_dims[0]:
        raise DimensionError(f"encoder expects width {e.d}, got {np.shape(x_incomplete)[-1]}")
    if leaves is None:
        tape = tape or Tape()
        leaves = register(tape, e.params, requires_grad=False)
    tape = leaves[0].tape
    trunk = leaves[:e.n_trunk]
    h = _forward(tape.constant(inp), trunk, [e.hidden_activation] * (len(trunk) // 2))
    w_mu, b_mu, w_ls, b_ls = leaves[e.n_trunk:]
    return DiagGaussianParams(h @ w_mu + b_mu, h @ w_ls + b_ls)


def param_count(layer_dims) -> int:
    dims = list(layer_dims)
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
