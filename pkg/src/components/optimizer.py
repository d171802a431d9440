"""
AdamW with decoupled weight decay, global-norm gradient clipping, the
warmup x cosine learning-rate schedule and the evidence-annealing ramp.

Parameters, gradients and moments are ``{name: ndarray}`` dicts; every step
returns new dicts and leaves its inputs untouched.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from src.exception import ContractError

Arrays = Dict[str, np.ndarray]


@dataclass(frozen=True)
class OptimState:
    m: Arrays = field(default_factory=dict)
    v: Arrays = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "OptimState":
        return cls(
            m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            step=0,
        )


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> Arrays:
    """Rescale every gradient by max_norm / ‖g‖ when the global L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise ContractError("cannot clip non-finite gradients")
    if norm <= max_norm:
        return {k: np.array(g, dtype=np.float64) for k, g in grads.items()}
    scale = max_norm / norm
    return {k: np.asarray(g, dtype=np.float64) * scale for k, g in grads.items()}


def adamw_step(state: OptimState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
               lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> Tuple[Arrays, OptimState]:
    """θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ, with bias-corrected moments."""
    if set(params) != set(grads):
        raise ContractError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    beta1, beta2 = betas
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(theta):
            raise ContractError(f"gradient for '{name}' has shape {g.shape}, parameter {np.shape(theta)}")
        m = beta1 * state.m.get(name, np.zeros_like(g)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(g)) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps) - lr * weight_decay * theta
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimState(m=new_m, v=new_v, step=t)


def lr_at(t: int, learning_rate: float, total_steps: int, warmup_steps: int) -> float:
    """η·min(1, t/T_warmup)·½(1 + cos(πt/T_total)); zero at t = 0 and t = T_total."""
    if total_steps <= 0:
        raise ContractError("total_steps must be positive")
    if not 0 <= t <= total_steps:
        raise ContractError(f"step {t} outside [0, {total_steps}]")
    warm = 1.0 if warmup_steps <= 0 else min(1.0, t / warmup_steps)
    return learning_rate * warm * 0.5 * (1.0 + math.cos(math.pi * t / total_steps))


def evidence_scale(t: int, anneal_steps: int) -> float:
    if anneal_steps <= 0:
        raise ContractError("anneal_steps must be positive")
    return min(1.0, max(0.0, t / anneal_steps))


def fraction_to_steps(fraction: float, total_steps: int) -> int:
    """Convert a warmup/anneal fraction of T_total to a step count (at least 1)."""
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"schedule fraction {fraction} outside (0, 1]")
    return max(1, int(round(fraction * total_steps)))
