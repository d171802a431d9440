"""
Single-layer LSTM over normalized return windows.

Gate blocks are stored concatenated along the last axis in the order
input, forget, cell, output:

    lstm.w_ih  (input_dim, 4H)
    lstm.w_hh  (H, 4H)
    lstm.bias  (4H,)
"""
from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from src.diffkit import Tensor, as_tensor, matmul, sigmoid, tanh
from src.exception import ContractError
from src.models.heads import HeadSpec, init_head_params

ModelParams = Dict[str, np.ndarray]


@dataclass(frozen=True)
class LstmSpec:
    input_dim: int = 1
    hidden_dim: int = 32
    dropout_rate: float = 0.1
    lookback: int = 50

    def __post_init__(self):
        if self.hidden_dim < 1 or self.input_dim < 1 or self.lookback < 1:
            raise ContractError("LSTM dimensions and lookback must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate {self.dropout_rate} outside [0, 1)")


def lstm_param_count(spec: LstmSpec) -> int:
    h, i = spec.hidden_dim, spec.input_dim
    return 4 * (h * (i + h) + h)


def init_params(spec: LstmSpec, head: HeadSpec, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    h = spec.hidden_dim
    bound = 1.0 / np.sqrt(h)
    bias = np.zeros(4 * h)
    bias[h:2 * h] = 1.0
    params = {
        "lstm.w_ih": rng.uniform(-bound, bound, size=(spec.input_dim, 4 * h)),
        "lstm.w_hh": rng.uniform(-bound, bound, size=(h, 4 * h)),
        "lstm.bias": bias,
    }
    params.update(init_head_params(h, head, rng))
    return params


def dropout(x: Tensor, rate: float, seed: int) -> Tensor:
    """Inverted dropout with a mask drawn from ``seed``."""
    if rate <= 0.0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def lstm_forward(params: Mapping[str, Tensor], batch, spec: LstmSpec,
                 training: bool = False, dropout_seed: int = 0) -> Tensor:
    """Run the recurrence over (batch, lookback, input_dim) and return h_T."""
    x = np.asarray(batch.data if isinstance(batch, Tensor) else batch, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or x.shape[1] != spec.lookback or x.shape[2] != spec.input_dim:
        raise ContractError(
            f"expected batch of shape (B, {spec.lookback}, {spec.input_dim}), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ContractError("non-finite values in LSTM input batch")

    n, steps, _ = x.shape
    h_dim = spec.hidden_dim
    w_ih, w_hh, bias = (as_tensor(params[k]) for k in ("lstm.w_ih", "lstm.w_hh", "lstm.bias"))
    if w_hh.shape != (h_dim, 4 * h_dim):
        raise ContractError(f"lstm.w_hh has shape {w_hh.shape}, expected {(h_dim, 4 * h_dim)}")

    h = Tensor(np.zeros((n, h_dim)))
    c = Tensor(np.zeros((n, h_dim)))
    for t in range(steps):
        z = matmul(x[:, t, :], w_ih) + matmul(h, w_hh) + bias
        i = sigmoid(z[:, :h_dim])
        f = sigmoid(z[:, h_dim:2 * h_dim])
        g = tanh(z[:, 2 * h_dim:3 * h_dim])
        o = sigmoid(z[:, 3 * h_dim:])
        c = f * c + i * g
        h = o * tanh(c)

    if training:
        h = dropout(h, spec.dropout_rate, dropout_seed)
    return h
