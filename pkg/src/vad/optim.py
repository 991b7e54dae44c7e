"""Gradient-step rules and plateau detection.

Updates are applied in place to the parameter arrays. The posterior bank gets
its own row-wise Adam so each datapoint keeps an independent step counter.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DimensionError, NumericError

CONTINUE = "continue"
STOP = "stop"


def _check_pair(params, grads):
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError(f"parameter {p.shape} vs gradient {g.shape}")
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def copy(self) -> "AdamState":
        return copy.deepcopy(self)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam descent step. Mutates ``params`` and ``state``."""
    _check_pair(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("Adam state was built for a different parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise DimensionError(f"Adam moment {m.shape} vs parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class RowAdamState:
    """Adam moments for an ``[N, k]`` parameter whose rows step independently."""

    lr: float
    m: np.ndarray
    v: np.ndarray
    t: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, lr: float) -> "RowAdamState":
        return cls(lr, np.zeros(shape), np.zeros(shape), np.zeros(shape[0], dtype=np.int64))


def adam_step_rows(param: np.ndarray, grad: np.ndarray, rows: np.ndarray,
                   state: RowAdamState) -> None:
    """Adam step on ``param[rows]`` only; other rows and their moments are untouched."""
    if grad.shape != (len(rows), param.shape[1]):
        raise DimensionError(f"gradient {grad.shape} for {len(rows)} rows of {param.shape}")
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient")
    state.t[rows] += 1
    t = state.t[rows][:, None]
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m[rows] + (1.0 - b1) * grad
    v = b2 * state.v[rows] + (1.0 - b2) * (grad * grad)
    state.m[rows] = m
    state.v[rows] = v
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    param[rows] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float):
    _check_pair(params, grads)
    for p, g in zip(params, grads):
        p -= lr * g
    return params


@dataclass
class PlateauState:
    """Tracks the best objective value seen; ``mode="max"`` for lower bounds."""

    rel_tol: float = 1e-4
    patience: int = 20
    mode: str = "max"
    history: list[float] = field(default_factory=list)
    best: float = -math.inf
    since_best: int = 0

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.mode not in ("max", "min"):
            raise ConfigError(f"mode must be 'max' or 'min', got {self.mode!r}")
        if self.mode == "min" and self.best == -math.inf:
            self.best = math.inf


def plateau_check(state: PlateauState, new_value: float) -> str:
    """Append ``new_value``; return ``"stop"`` after ``patience`` values without improvement."""
    new_value = float(new_value)
    if math.isnan(new_value):
        raise NumericError("NaN objective value")
    state.history.append(new_value)
    margin = state.rel_tol * (1.0 + abs(state.best)) if math.isfinite(state.best) else 0.0
    if state.mode == "max":
        improved = new_value > state.best + margin
    else:
        improved = new_value < state.best - margin
    if improved or not math.isfinite(state.best):
        state.best = new_value
        state.since_best = 0
        return CONTINUE
    state.since_best += 1
    return STOP if state.since_best >= state.patience else CONTINUE
