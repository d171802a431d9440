"""
Normal-Inverse-Gamma outputs: parameter constraints, uncertainty
decomposition and Student-t predictive intervals from a single forward pass.

The NIG predictive marginal is Student-t with 2α degrees of freedom, location
μ and scale √(β(1+λ)/(αλ)).
"""
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

from src.diffkit import Tensor, as_tensor, clamp_min, softplus, tanh
from src.exception import ContractError, DegenerateParameterError

ArrayLike = Union[float, np.ndarray, Tensor]

LAMBDA_OFFSET = 0.01
ALPHA_OFFSET = 1.0
# 1 + softplus(raw) rounds to exactly 1 once raw < -37
ALPHA_FLOOR = 1e-6
BETA_OFFSET = 0.01


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class NIGParams:
    """μ, λ (the evidence on the mean, often written ν), α, β.

    Fields are floats/arrays at inference time and Tensors while training.
    """
    mu: ArrayLike
    lam: ArrayLike
    alpha: ArrayLike
    beta: ArrayLike

    def values(self) -> "NIGParams":
        return NIGParams(_values(self.mu), _values(self.lam), _values(self.alpha), _values(self.beta))

    def validate(self) -> "NIGParams":
        v = self.values()
        for name in ("mu", "lam", "alpha", "beta"):
            if not np.all(np.isfinite(getattr(v, name))):
                raise ContractError(f"NIG parameter {name} is not finite")
        if np.any(v.lam <= 0):
            raise DegenerateParameterError("NIG parameter lam must be > 0")
        if np.any(v.alpha <= 1):
            raise DegenerateParameterError("NIG parameter alpha must be > 1")
        if np.any(v.beta <= 0):
            raise DegenerateParameterError("NIG parameter beta must be > 0")
        return self


@dataclass(frozen=True)
class UncertaintyDecomposition:
    mean: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    total_variance: np.ndarray

    @property
    def total_std(self) -> np.ndarray:
        return np.sqrt(self.total_variance)


@dataclass(frozen=True)
class Interval:
    lower: np.ndarray
    upper: np.ndarray
    level: float
    unbounded: bool = False

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ContractError(f"interval level {self.level} outside (0, 1)")
        lower, upper = _values(self.lower), _values(self.upper)
        if np.any(lower > upper):
            raise ContractError("interval lower bound exceeds upper bound")

    @property
    def width(self) -> np.ndarray:
        return _values(self.upper) - _values(self.lower)


def constrain_nig(raw, bounded_mean: bool = False, bound_scale: float = 3.0) -> NIGParams:
    """Map raw head outputs (..., 4) to valid NIG parameters."""
    raw = as_tensor(raw)
    if raw.shape[-1] != 4:
        raise ContractError(f"evidential head needs 4 outputs, got shape {raw.shape}")
    mu = raw[..., 0]
    if bounded_mean:
        mu = tanh(mu) * bound_scale
    return NIGParams(
        mu=mu,
        lam=softplus(raw[..., 1]) + LAMBDA_OFFSET,
        alpha=clamp_min(softplus(raw[..., 2]), ALPHA_FLOOR) + ALPHA_OFFSET,
        beta=softplus(raw[..., 3]) + BETA_OFFSET,
    )


def decompose(p: NIGParams) -> UncertaintyDecomposition:
    v = p.values()
    if np.any(v.alpha <= 1.0 + 1e-12):
        raise DegenerateParameterError("alpha must exceed 1 for a finite aleatoric variance")
    if np.any(v.lam <= 0) or np.any(v.beta <= 0):
        raise ContractError("NIG parameters lam and beta must be > 0")
    aleatoric = v.beta / (v.alpha - 1.0)
    epistemic = aleatoric / v.lam
    return UncertaintyDecomposition(
        mean=np.asarray(v.mu, dtype=np.float64),
        aleatoric=np.asarray(aleatoric),
        epistemic=np.asarray(epistemic),
        total_variance=np.asarray(aleatoric + epistemic),
    )


def predictive_scale(p: NIGParams) -> np.ndarray:
    v = p.values()
    return np.sqrt(v.beta * (1.0 + v.lam) / (v.alpha * v.lam))


def student_t_cdf(x: float, df: float) -> float:
    """Student-t CDF through the regularized incomplete beta function."""
    tail = 0.5 * betainc(0.5 * df, 0.5, df / (df + x * x))
    return 1.0 - tail if x > 0 else tail


def _student_t_quantile(prob: float, df: float, tol: float) -> float:
    if prob == 0.5:
        return 0.0
    if prob < 0.5:
        return -_student_t_quantile(1.0 - prob, df, tol)
    hi = 1.0
    while student_t_cdf(hi, df) < prob:
        hi *= 2.0
    return brentq(lambda t: student_t_cdf(t, df) - prob, 0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


def student_t_quantile(prob, df, tol: float = 1e-12):
    """Quantile of the standard Student-t, inverted numerically from the CDF."""
    prob = np.asarray(prob, dtype=np.float64)
    df = np.asarray(df, dtype=np.float64)
    if np.any((prob <= 0) | (prob >= 1)):
        raise ContractError("quantile probability must lie in (0, 1)")
    if np.any(df <= 0):
        raise ContractError("degrees of freedom must be > 0")
    out = np.vectorize(lambda p_, d_: _student_t_quantile(float(p_), float(d_), tol), otypes=[float])(prob, df)
    return float(out) if out.ndim == 0 else out


def predictive_interval(p: NIGParams, level: float = 0.95) -> Interval:
    """μ ± t_{2α}((1+level)/2) · √(β(1+λ)/(αλ))."""
    if not 0.0 < level < 1.0:
        raise ContractError(f"interval level {level} outside (0, 1)")
    v = p.validate().values()
    t_crit = student_t_quantile(0.5 + 0.5 * level, 2.0 * v.alpha)
    half = t_crit * predictive_scale(v)
    return Interval(lower=v.mu - half, upper=v.mu + half, level=level)


def sample_predictive(p: NIGParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw from the NIG predictive: σ² ~ Inv-Gamma(α, β), μ' ~ N(μ, σ²/λ),
    y ~ N(μ', σ²). Returns shape (n,) + shape of the parameters.
    """
    v = p.validate().values()
    shape = (n,) + np.shape(v.mu)
    sigma2 = v.beta / rng.gamma(shape=v.alpha, scale=1.0, size=shape)
    mu_draw = rng.normal(v.mu, np.sqrt(sigma2 / v.lam), size=shape)
    return rng.normal(mu_draw, np.sqrt(sigma2), size=shape)
