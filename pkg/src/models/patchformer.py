"""
Toy-scale patch transformer: frequency-keyed patch sizes, linear patch
embedding with sinusoidal positions, pre-norm blocks of multi-head scaled
dot-product attention and a SwiGLU feed-forward, each wrapped in a residual.

Attention heads split d_model into n_heads slices of width d_k and are
concatenated before the output projection.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Sequence

import numpy as np

from src.diffkit import (
    Tensor, as_tensor, concat, matmul, mean, reshape, rsqrt, softmax, square,
    swish, transpose,
)
from src.exception import ContractError
from src.models.heads import HeadSpec, init_head_params
from src.models.lstm import dropout

LAYER_NORM_EPS = 1e-5


class Frequency(str, Enum):
    YEARLY = "yearly"
    QUARTERLY = "quarterly"
    MONTHLY = "monthly"
    WEEKLY = "weekly"
    DAILY = "daily"
    HOURLY = "hourly"
    MINUTE = "minute"
    SECOND = "second"


PATCH_SIZES = {
    Frequency.YEARLY: [8],
    Frequency.QUARTERLY: [8],
    Frequency.MONTHLY: [8, 16, 32],
    Frequency.WEEKLY: [16, 32],
    Frequency.DAILY: [16, 32],
    Frequency.HOURLY: [32, 64],
    Frequency.MINUTE: [32, 64, 128],
    Frequency.SECOND: [64, 128],
}


@dataclass(frozen=True)
class PatchformerSpec:
    d_model: int = 16
    n_heads: int = 2
    n_layers: int = 1
    ffn_hidden: int = 32
    patch_size: int = 16
    lookback: int = 50
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % 2:
            raise ContractError("d_model must be a positive even integer")
        if self.n_heads <= 0 or self.d_model % self.n_heads:
            raise ContractError(f"n_heads {self.n_heads} must divide d_model {self.d_model}")
        if min(self.n_layers, self.ffn_hidden, self.patch_size, self.lookback) <= 0:
            raise ContractError("patchformer sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate {self.dropout_rate} outside [0, 1)")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_tokens(self) -> int:
        return math.ceil(self.lookback / self.patch_size)


def select_patch_sizes(freq) -> List[int]:
    return list(PATCH_SIZES[Frequency(freq)])


def choose_patch_size(sizes: Sequence[int], length: int) -> int:
    """Largest candidate dividing ``length``; else the largest not exceeding it (left-padded); else the smallest."""
    dividing = [s for s in sizes if length % s == 0]
    if dividing:
        return max(dividing)
    fitting = [s for s in sizes if s <= length]
    return max(fitting) if fitting else min(sizes)


def positional_encoding(t: int, d: int, d_model: int) -> float:
    if not 0 <= d < d_model:
        raise ContractError(f"dimension index {d} outside [0, {d_model})")
    angle = t / 10000.0 ** (d / d_model)
    return math.sin(angle) if d % 2 == 0 else math.cos(angle)


def positional_encoding_table(n_positions: int, d_model: int) -> np.ndarray:
    t = np.arange(n_positions, dtype=np.float64)[:, None]
    d = np.arange(d_model)
    angle = t / np.power(10000.0, d / d_model)
    return np.where(d % 2 == 0, np.sin(angle), np.cos(angle))


def pad_left(series: np.ndarray, patch_size: int) -> np.ndarray:
    """Pad (..., T) on the left with each series' first value up to a multiple of patch_size."""
    length = series.shape[-1]
    if length == 0:
        raise ContractError("cannot patch an empty series")
    pad = (-length) % patch_size
    if pad == 0:
        return series
    first = np.repeat(series[..., :1], pad, axis=-1)
    return np.concatenate([first, series], axis=-1)


def embed_patches(batch, patch_size: int, params: Mapping[str, Tensor]) -> Tensor:
    """(B, T) series → (B, N, d_model) tokens: non-overlapping patches, projection, additive PE."""
    series = pad_left(np.asarray(batch, dtype=np.float64), patch_size)
    n, length = series.shape
    n_tokens = length // patch_size
    weight = as_tensor(params["embed.weight"])
    if weight.shape[0] != patch_size:
        raise ContractError(f"embed.weight expects patch size {weight.shape[0]}, got {patch_size}")
    d_model = weight.shape[1]
    tokens = matmul(series.reshape(n * n_tokens, patch_size), weight) + params["embed.bias"]
    tokens = reshape(tokens, (n, n_tokens, d_model))
    return tokens + positional_encoding_table(n_tokens, d_model)


def patch_embed(series, patch_size: int, params: Mapping[str, Tensor]) -> Tensor:
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size == 0:
        raise ContractError("patch_embed expects a non-empty 1-D series")
    tokens = embed_patches(series[None, :], patch_size, params)
    return reshape(tokens, tokens.shape[1:])


def attention(q, k, v) -> Tensor:
    """softmax(QKᵀ/√d_k)V with row-wise max-subtracted softmax."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ContractError(f"attention shapes Q{q.shape} K{k.shape} V{v.shape} do not match")
    scores = matmul(q, transpose(k)) * (1.0 / math.sqrt(q.shape[1]))
    return matmul(softmax(scores, axis=-1), v)


def attention_weights(q, k) -> np.ndarray:
    q, k = np.asarray(q, dtype=np.float64), np.asarray(k, dtype=np.float64)
    return softmax(q @ k.T / math.sqrt(q.shape[1]), axis=-1).data


def swiglu_ffn(x, params: Mapping[str, Tensor], prefix: str = "ffn") -> Tensor:
    """W₂ · (swish(W₁x + b₁) ⊙ (W₃x + b₃)) over the last axis of (n, d) or (d,)."""
    x = as_tensor(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.shape[0]))
    gate = swish(matmul(x, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
    value = matmul(x, params[f"{prefix}.w3"]) + params[f"{prefix}.b3"]
    out = matmul(gate * value, params[f"{prefix}.w2"])
    return reshape(out, (out.shape[1],)) if squeeze else out


def layer_norm(x: Tensor, gain, bias) -> Tensor:
    centered = x - mean(x, axis=-1, keepdims=True)
    var = mean(square(centered), axis=-1, keepdims=True)
    return centered * rsqrt(var + LAYER_NORM_EPS) * gain + bias


def multi_head_attention(x: Tensor, params: Mapping[str, Tensor], spec: PatchformerSpec, prefix: str) -> Tensor:
    """Self-attention over one sequence of tokens (N, d_model)."""
    q = matmul(x, params[f"{prefix}.wq"])
    k = matmul(x, params[f"{prefix}.wk"])
    v = matmul(x, params[f"{prefix}.wv"])
    heads = []
    for h in range(spec.n_heads):
        cols = slice(h * spec.d_k, (h + 1) * spec.d_k)
        heads.append(attention(q[:, cols], k[:, cols], v[:, cols]))
    return matmul(concat(heads, axis=1), params[f"{prefix}.wo"])


def transformer_block(x: Tensor, params: Mapping[str, Tensor], spec: PatchformerSpec, layer: int) -> Tensor:
    """Pre-norm block on (B, N, d_model)."""
    p = f"block{layer}"
    n, n_tokens, d = x.shape
    flat = reshape(x, (n * n_tokens, d))
    normed = reshape(layer_norm(flat, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"]), (n, n_tokens, d))
    attended = concat(
        [reshape(multi_head_attention(normed[b], params, spec, f"{p}.attn"), (1, n_tokens, d)) for b in range(n)],
        axis=0,
    )
    x = x + attended
    flat = reshape(x, (n * n_tokens, d))
    ff = swiglu_ffn(layer_norm(flat, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"]), params, f"{p}.ffn")
    return x + reshape(ff, (n, n_tokens, d))


def init_params(spec: PatchformerSpec, head: HeadSpec, seed: int) -> Dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d, f = spec.d_model, spec.ffn_hidden

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params = {
        "embed.weight": uniform(spec.patch_size, (spec.patch_size, d)),
        "embed.bias": np.zeros(d),
    }
    for layer in range(spec.n_layers):
        p = f"block{layer}"
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{p}.attn.{name}"] = uniform(d, (d, d))
        params[f"{p}.ln1.gain"] = np.ones(d)
        params[f"{p}.ln1.bias"] = np.zeros(d)
        params[f"{p}.ln2.gain"] = np.ones(d)
        params[f"{p}.ln2.bias"] = np.zeros(d)
        params[f"{p}.ffn.w1"] = uniform(d, (d, f))
        params[f"{p}.ffn.b1"] = np.zeros(f)
        params[f"{p}.ffn.w3"] = uniform(d, (d, f))
        params[f"{p}.ffn.b3"] = np.zeros(f)
        params[f"{p}.ffn.w2"] = uniform(f, (f, d))
    params["final_ln.gain"] = np.ones(d)
    params["final_ln.bias"] = np.zeros(d)
    params.update(init_head_params(d, head, rng))
    return params


def patchformer_forward(params: Mapping[str, Tensor], batch, spec: PatchformerSpec,
                        training: bool = False, dropout_seed: int = 0) -> Tensor:
    """(B, lookback[, 1]) windows → (B, d_model) representation of the last token."""
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, :, 0]
    if x.ndim != 2 or x.shape[1] != spec.lookback:
        raise ContractError(f"expected batch of shape (B, {spec.lookback}), got {x.shape}")

    tokens = embed_patches(x, spec.patch_size, params)
    for layer in range(spec.n_layers):
        tokens = transformer_block(tokens, params, spec, layer)
    last = tokens[:, -1, :]
    out = layer_norm(last, params["final_ln.gain"], params["final_ln.bias"])
    if training:
        out = dropout(out, spec.dropout_rate, dropout_seed)
    return out
