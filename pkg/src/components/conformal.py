"""
Split-conformal intervals around a point forecaster, with an online
significance update for non-exchangeable streams.

    q = the ceil((n + 1)(1 - alpha))-th smallest |y - y_hat| on calibration data
    alpha_{t+1} = clip(alpha_t + gamma * (target_alpha - err_t))
"""
import math
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from src.exception import ContractError
from src.logger import logging
from src.models.evidential import Interval

ALPHA_MIN = 1e-4
ALPHA_MAX = 1.0 - 1e-4


@dataclass(frozen=True)
class CalibrationSet:
    scores: np.ndarray

    def __post_init__(self):
        scores = np.sort(np.asarray(self.scores, dtype=np.float64).ravel())
        if scores.size == 0:
            raise ContractError("calibration set is empty")
        if np.any(~np.isfinite(scores)) or np.any(scores < 0):
            raise ContractError("nonconformity scores must be finite and >= 0")
        object.__setattr__(self, "scores", scores)

    @classmethod
    def from_residuals(cls, predictions, targets) -> "CalibrationSet":
        predictions = np.asarray(predictions, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if predictions.shape != targets.shape:
            raise ContractError(f"length mismatch: {predictions.shape} vs {targets.shape}")
        return cls(np.abs(targets - predictions))

    def __len__(self):
        return self.scores.size


def calibrate(calibration: CalibrationSet, alpha: float) -> float:
    """Conformal quantile; ``math.inf`` when the rank exceeds n (the interval is the whole line)."""
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha {alpha} outside (0, 1)")
    n = len(calibration)
    rank = math.ceil(round((n + 1) * (1.0 - alpha), 9))
    if rank > n:
        return math.inf
    return float(calibration.scores[max(rank, 1) - 1])


def interval(point, q: float, level: float = 0.95) -> Interval:
    if q < 0:
        raise ContractError(f"conformal quantile must be >= 0, got {q}")
    point = np.asarray(point, dtype=np.float64)
    if math.isinf(q):
        return Interval(lower=np.full_like(point, -np.inf), upper=np.full_like(point, np.inf),
                        level=level, unbounded=True)
    return Interval(lower=point - q, upper=point + q, level=level)


@dataclass(frozen=True)
class AdaptiveState:
    alpha_t: float
    gamma: float = 0.01
    target_alpha: float = 0.05

    def __post_init__(self):
        if self.gamma < 0:
            raise ContractError("gamma must be >= 0")
        if not 0.0 < self.target_alpha < 1.0:
            raise ContractError("target_alpha must lie in (0, 1)")
        object.__setattr__(self, "alpha_t", float(min(ALPHA_MAX, max(ALPHA_MIN, self.alpha_t))))


def adaptive_update(state: AdaptiveState, covered: bool) -> AdaptiveState:
    err = 0.0 if covered else 1.0
    return replace(state, alpha_t=state.alpha_t + state.gamma * (state.target_alpha - err))


@dataclass(frozen=True)
class ConformalConfig:
    alpha: float = 0.05
    gamma: float = 0.01
    adaptive: bool = True


@dataclass(frozen=True)
class StreamStep:
    point: float
    q: float
    lower: float
    upper: float
    covered: bool
    alpha_t: float


def run_stream(calibration: CalibrationSet, points, targets, config: ConformalConfig = ConformalConfig()) -> List[StreamStep]:
    """
    Walk the (chronological) stream: emit the interval at the current alpha_t,
    observe the target, then update alpha_t. With ``adaptive=False`` the split
    quantile stays fixed.
    """
    points = np.asarray(points, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if points.shape != targets.shape:
        raise ContractError(f"length mismatch: {points.shape} vs {targets.shape}")
    state = AdaptiveState(alpha_t=config.alpha, gamma=config.gamma if config.adaptive else 0.0,
                          target_alpha=config.alpha)
    steps = []
    for point, y in zip(points, targets):
        q = calibrate(calibration, state.alpha_t)
        lower, upper = point - q, point + q
        covered = bool(lower <= y <= upper)
        steps.append(StreamStep(float(point), q, float(lower), float(upper), covered, state.alpha_t))
        state = adaptive_update(state, covered)
    unbounded = sum(math.isinf(s.q) for s in steps)
    if unbounded:
        logging.info("Conformal stream produced %d unbounded intervals", unbounded)
    return steps


def finite_quantile(calibration: CalibrationSet, q: float) -> float:
    """Largest calibration score in place of the unbounded sentinel, for metrics that need a width."""
    return float(calibration.scores[-1]) if math.isinf(q) else q


def empirical_coverage(steps: List[StreamStep], last: Optional[int] = None) -> float:
    window = steps[-last:] if last else steps
    if not window:
        raise ContractError("no stream steps")
    return float(np.mean([s.covered for s in window]))
