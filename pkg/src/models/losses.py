"""
Training objectives: evidential NLL + regularizer + coverage (combined), and
the baseline zoo (MSE, Huber, Gaussian NLL, Student-t NLL, pinball, Gaussian
mixture NLL). Per-sample functions return Tensors so every loss can be
differentiated through diffkit.
"""
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import t as t_dist

from src.diffkit import (
    Tensor, abs_, as_tensor, exp, lgamma, log, logsumexp, mean, sigmoid,
    softplus, square, sum_, tanh,
)
from src.exception import ContractError
from src.models.evidential import Interval, NIGParams, student_t_quantile

SIGMA_FLOOR = 1e-6
DF_OFFSET = 2.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LossValue:
    scalar: float
    per_sample: Optional[np.ndarray] = None

    @classmethod
    def from_per_sample(cls, losses) -> "LossValue":
        values = np.asarray(losses.data if isinstance(losses, Tensor) else losses, dtype=np.float64)
        return cls(scalar=float(values.mean()), per_sample=values)


@dataclass(frozen=True)
class CombinedLossWeights:
    lambda_evd: float = 0.1
    lambda_coverage: float = 0.0
    lambda_wd: float = 0.001
    target_picp: float = 0.95

    def __post_init__(self):
        for name in ("lambda_evd", "lambda_coverage", "lambda_wd"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if not 0.0 < self.target_picp < 1.0:
            raise ContractError("target_picp must lie in (0, 1)")


def der_nll(p: NIGParams, y) -> Tensor:
    """Negative log marginal likelihood of y under NIG(μ, λ, α, β), per sample."""
    p.validate()
    y = as_tensor(y)
    mu, lam, alpha, beta = (as_tensor(v) for v in (p.mu, p.lam, p.alpha, p.beta))
    omega = beta * (lam + 1.0) * 2.0
    return (
        log(math.pi / lam) * 0.5
        - alpha * log(omega)
        + (alpha + 0.5) * log(square(y - mu) * lam + omega)
        + lgamma(alpha)
        - lgamma(alpha + 0.5)
    )


def der_reg(p: NIGParams, y) -> Tensor:
    """|μ − y|·(α + λ − 2); not clamped, so it goes negative when α + λ < 2."""
    mu, lam, alpha = as_tensor(p.mu), as_tensor(p.lam), as_tensor(p.alpha)
    return abs_(mu - y) * (alpha + lam - 2.0)


def soft_picp(lower, upper, y, sharpness_k: float = 50.0) -> Tensor:
    y = as_tensor(y)
    inside = sigmoid((y - lower) * sharpness_k) * sigmoid((as_tensor(upper) - y) * sharpness_k)
    return mean(inside)


def hard_picp(lower, upper, y) -> float:
    lower = lower.data if isinstance(lower, Tensor) else np.asarray(lower)
    upper = upper.data if isinstance(upper, Tensor) else np.asarray(upper)
    y = y.data if isinstance(y, Tensor) else np.asarray(y)
    return float(np.mean((y >= lower) & (y <= upper)))


def coverage_loss(intervals: Interval, targets, target_picp: float = 0.95,
                  sharpness_k: float = 50.0, hard: bool = False):
    """
    |target_picp − PICP|. The soft form replaces the membership indicator with
    sigmoid(k(y − lower))·sigmoid(k(upper − y)); ``hard=True`` counts exactly
    and returns a float for reporting.
    """
    n = np.size(targets.data if isinstance(targets, Tensor) else targets)
    if n == 0:
        raise ContractError("coverage_loss needs at least one target")
    if sharpness_k <= 0:
        raise ContractError("sharpness_k must be positive")
    if hard:
        return abs(target_picp - hard_picp(intervals.lower, intervals.upper, targets))
    return abs_(soft_picp(intervals.lower, intervals.upper, targets, sharpness_k) - target_picp)


def student_t_critical(alpha, level: float = 0.95) -> Tensor:
    """
    t_{2α}((1 + level)/2) as a graph node. The derivative in α comes from
    implicit differentiation of F(q; ν) = p: dq/dν = −(∂F/∂ν) / f(q; ν).
    """
    alpha = as_tensor(alpha)
    prob = 0.5 + 0.5 * level
    df = 2.0 * alpha.data
    q = np.asarray(student_t_quantile(np.full(df.shape, prob), df, tol=1e-14), dtype=np.float64)
    h = 1e-6 * np.maximum(df, 1.0)
    dF_ddf = (t_dist.cdf(q, df + h) - t_dist.cdf(q, df - h)) / (2.0 * h)
    dq_dalpha = -2.0 * dF_ddf / t_dist.pdf(q, df)

    def backward(g):
        return (g * dq_dalpha,)

    return Tensor(q, (alpha,), backward, "t_critical")


def nig_training_interval(p: NIGParams, level: float = 0.95) -> "_TensorInterval":
    """Differentiable Student-t interval μ ± t_{2α}·√(β(1+λ)/(αλ)) for the coverage term."""
    lam, alpha, beta = as_tensor(p.lam), as_tensor(p.alpha), as_tensor(p.beta)
    scale = exp(log(beta * (lam + 1.0) / (alpha * lam)) * 0.5)
    half = scale * student_t_critical(alpha, level)
    mu = as_tensor(p.mu)
    return _TensorInterval(mu - half, mu + half, level)


@dataclass(frozen=True)
class _TensorInterval:
    lower: Tensor
    upper: Tensor
    level: float


def weight_norm_sq(params: Iterable) -> Tensor:
    total = as_tensor(0.0)
    for w in params:
        total = total + sum_(square(w))
    return total


def combined_loss(p: NIGParams, y, weights: CombinedLossWeights = CombinedLossWeights(),
                  evidence_scale: float = 1.0, params_for_wd: Sequence = (),
                  sharpness_k: float = 50.0, hard_coverage: bool = False) -> Tensor:
    """
    mean(NLL) + λ_evd·s·mean(reg) + λ_cov·coverage + λ_wd·‖θ‖², where the
    annealing factor s multiplies the evidence regularizer only. Validation
    passes ``hard_coverage=True`` to count interval membership exactly.
    """
    if not 0.0 <= evidence_scale <= 1.0:
        raise ContractError(f"evidence_scale {evidence_scale} outside [0, 1]")
    total = mean(der_nll(p, y))
    if weights.lambda_evd > 0 and evidence_scale > 0:
        total = total + mean(der_reg(p, y)) * (weights.lambda_evd * evidence_scale)
    if weights.lambda_coverage > 0:
        cov = coverage_loss(nig_training_interval(p, weights.target_picp), y,
                            weights.target_picp, sharpness_k, hard=hard_coverage)
        total = total + cov * weights.lambda_coverage
    if weights.lambda_wd > 0 and params_for_wd:
        total = total + weight_norm_sq(params_for_wd) * weights.lambda_wd
    return total


def location(raw_mean: Tensor, bounded_mean: bool = False, bound_scale: float = 3.0) -> Tensor:
    return tanh(raw_mean) * bound_scale if bounded_mean else raw_mean


def _check_width(method: str, raw: Tensor, expected: int):
    if raw.ndim != 2 or raw.shape[1] != expected:
        raise ContractError(f"{method}: expected head output of width {expected}, got shape {raw.shape}")


def mse_loss(pred, y) -> Tensor:
    return square(as_tensor(pred) - y)


def huber_loss(pred, y, delta: float = 1.0) -> Tensor:
    r = as_tensor(pred) - y
    small = (np.abs(r.data) <= delta).astype(np.float64)
    return square(r) * (0.5 * small) + (abs_(r) - 0.5 * delta) * (delta * (1.0 - small))


def gaussian_nll(mu, variance, y) -> Tensor:
    variance = as_tensor(variance)
    return log(variance) * 0.5 + 0.5 * LOG_2PI + square(as_tensor(y) - mu) / (variance * 2.0)


def student_t_nll(mu, scale, df, y) -> Tensor:
    scale, df = as_tensor(scale), as_tensor(df)
    z2 = square((as_tensor(y) - mu) / scale)
    return (
        lgamma(df * 0.5)
        - lgamma((df + 1.0) * 0.5)
        + log(df * math.pi) * 0.5
        + log(scale)
        + (df + 1.0) * 0.5 * log(z2 / df + 1.0)
    )


def pinball_loss(quantiles, y, levels: Sequence[float]) -> Tensor:
    """Σ_τ max(τ(y − q̂τ), (τ − 1)(y − q̂τ)), written as ((2τ − 1)r + |r|)/2."""
    quantiles = as_tensor(quantiles)
    y = as_tensor(y)
    if quantiles.ndim == 2:
        y = _column(y)
    tau = np.asarray(levels, dtype=np.float64)
    if quantiles.shape[-1] != tau.size:
        raise ContractError(f"{tau.size} quantile levels for {quantiles.shape[-1]} outputs")
    r = y - quantiles
    per_level = (r * (2.0 * tau - 1.0) + abs_(r)) * 0.5
    return sum_(per_level, axis=-1)


def _column(y: Tensor) -> Tensor:
    return y[:, None] if y.ndim == 1 else y


def mixture_nll(logits, means, sigmas, y) -> Tensor:
    """−log Σ_k w_k N(y; μ_k, σ_k²) with w = softmax(logits)."""
    logits, means, sigmas = as_tensor(logits), as_tensor(means), as_tensor(sigmas)
    yc = _column(as_tensor(y))
    log_w = logits - logsumexp(logits, axis=-1)[:, None]
    log_n = (log(sigmas) + 0.5 * LOG_2PI) * -1.0 - square((yc - means) / sigmas) * 0.5
    return logsumexp(log_w + log_n, axis=-1) * -1.0


def head_width(method: str, n_quantiles: int = 3, n_components: int = 3) -> int:
    widths = {
        "mse": 1, "huber": 1, "conformal_base": 1,
        "gaussian_nll": 2, "student_t_nll": 3, "evidential": 4,
        "quantile": n_quantiles, "mixture": 3 * n_components,
    }
    if method not in widths:
        raise ContractError(f"unknown method '{method}'")
    return widths[method]


def baseline_loss(method: str, raw, y, quantile_levels: Sequence[float] = (0.025, 0.5, 0.975),
                  n_components: int = 3, huber_delta: float = 1.0,
                  bounded_mean: bool = False, bound_scale: float = 3.0) -> Tensor:
    """Per-sample loss of a non-evidential head from its raw (B, width) outputs."""
    raw = as_tensor(raw)
    _check_width(method, raw, head_width(method, len(quantile_levels), n_components))
    y = as_tensor(y)

    if method in ("mse", "conformal_base"):
        return mse_loss(location(raw[:, 0], bounded_mean, bound_scale), y)
    if method == "huber":
        return huber_loss(location(raw[:, 0], bounded_mean, bound_scale), y, huber_delta)
    if method == "gaussian_nll":
        mu = location(raw[:, 0], bounded_mean, bound_scale)
        return gaussian_nll(mu, softplus(raw[:, 1]) + SIGMA_FLOOR, y)
    if method == "student_t_nll":
        mu = location(raw[:, 0], bounded_mean, bound_scale)
        scale = softplus(raw[:, 1]) + SIGMA_FLOOR
        df = softplus(raw[:, 2]) + (DF_OFFSET + SIGMA_FLOOR)
        return student_t_nll(mu, scale, df, y)
    if method == "quantile":
        return pinball_loss(raw, y, quantile_levels)
    if method == "mixture":
        k = n_components
        means = raw[:, k:2 * k]
        if bounded_mean:
            means = tanh(means) * bound_scale
        return mixture_nll(raw[:, :k], means, softplus(raw[:, 2 * k:]) + SIGMA_FLOOR, y)
    raise ContractError(f"baseline_loss does not handle method '{method}'")

