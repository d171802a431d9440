import sys
from dataclasses import astuple, dataclass, fields
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import softmax
from scipy.stats import norm

from src.components.conformal import CalibrationSet, ConformalConfig, finite_quantile, run_stream
from src.components.data_transformation import NormStats, SequenceDataset, denormalize
from src.components.model_evaluation import crps_sample
from src.config_schema import PREDICTION_COLUMNS
from src.exception import ContractError, CustomException
from src.logger import logging
from src.models.evidential import decompose, predictive_interval, sample_predictive, student_t_quantile
from src.models.forecaster import ForecastModel
from src.models.losses import DF_OFFSET, SIGMA_FLOOR

NA = float("nan")


@dataclass(frozen=True)
class PredictionRecord:
    symbol: str
    index: int
    date: str
    method: str
    target_scaled: float
    actual_return: float
    mean: float
    std: float = NA
    lower: float = NA
    upper: float = NA
    aleatoric: float = NA
    epistemic: float = NA
    total_variance: float = NA


def records_to_frame(records: List[PredictionRecord]) -> pd.DataFrame:
    return pd.DataFrame([astuple(r) for r in records], columns=PREDICTION_COLUMNS)


def frame_to_records(frame: pd.DataFrame) -> List[PredictionRecord]:
    names = [f.name for f in fields(PredictionRecord)]
    out = []
    for row in frame[PREDICTION_COLUMNS].itertuples(index=False):
        values = dict(zip(names, row))
        values["index"] = int(values["index"])
        values["date"] = str(values["date"])
        out.append(PredictionRecord(**values))
    return out


@dataclass(frozen=True)
class Summary:
    """Model-scale predictive summary of one batch of windows."""
    mean: np.ndarray
    std: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    aleatoric: Optional[np.ndarray] = None
    epistemic: Optional[np.ndarray] = None
    samples: Optional[np.ndarray] = None


def _location(raw, model: ForecastModel):
    return model.head.bound_scale * np.tanh(raw) if model.head.bounded_mean else raw


def _softplus(x):
    return np.logaddexp(0.0, x)


def mixture_cdf(x: float, weights, means, sigmas) -> float:
    return float(np.sum(weights * norm.cdf((x - means) / sigmas)))


def mixture_quantile(prob: float, weights, means, sigmas) -> float:
    lo = float(np.min(means - 12.0 * sigmas))
    hi = float(np.max(means + 12.0 * sigmas))
    return brentq(lambda x: mixture_cdf(x, weights, means, sigmas) - prob, lo, hi, xtol=1e-12)


class PredictionPipeline:
    """
    Single-pass predictive summaries for every method, denormalized to the
    return scale: mean, std, 95% interval and (evidential) the variance split.
    """

    def __init__(self, model: ForecastModel, params, level: float = 0.95,
                 conformal: ConformalConfig = ConformalConfig(), crps_mode: str = "gaussian",
                 crps_samples: int = 2000, seed: int = 0):
        if crps_mode not in ("gaussian", "student_t_sampled"):
            raise ContractError(f"unknown crps_mode '{crps_mode}'")
        self.model = model
        self.params = params
        self.level = level
        self.conformal = conformal
        self.crps_mode = crps_mode
        self.crps_samples = crps_samples
        self.seed = seed
        self.z = float(norm.ppf(0.5 + 0.5 * level))

    def summarize(self, raw: np.ndarray, calibration: Optional[CalibrationSet] = None,
                  targets: Optional[np.ndarray] = None) -> Summary:
        method = self.model.method
        head = self.model.head
        tail = 0.5 + 0.5 * self.level

        if method in ("mse", "huber"):
            return Summary(mean=_location(raw[:, 0], self.model))

        if method == "conformal_base":
            point = _location(raw[:, 0], self.model)
            if calibration is None or targets is None:
                raise ContractError("conformal summaries need a calibration set and the target stream")
            steps = run_stream(calibration, point, targets, self.conformal)
            q = np.array([finite_quantile(calibration, s.q) for s in steps])
            return Summary(mean=point, std=q / self.z, lower=point - q, upper=point + q)

        if method == "gaussian_nll":
            mu = _location(raw[:, 0], self.model)
            sigma = np.sqrt(_softplus(raw[:, 1]) + SIGMA_FLOOR)
            return Summary(mean=mu, std=sigma, lower=mu - self.z * sigma, upper=mu + self.z * sigma)

        if method == "student_t_nll":
            mu = _location(raw[:, 0], self.model)
            scale = _softplus(raw[:, 1]) + SIGMA_FLOOR
            df = _softplus(raw[:, 2]) + DF_OFFSET + SIGMA_FLOOR
            half = student_t_quantile(np.full(mu.shape, tail), df) * scale
            return Summary(mean=mu, std=scale * np.sqrt(df / (df - 2.0)), lower=mu - half, upper=mu + half)

        if method == "quantile":
            levels = np.asarray(head.quantile_levels)
            q = np.sort(raw, axis=1)
            median = q[:, int(np.argmin(np.abs(levels - 0.5)))]
            lower, upper = q[:, 0], q[:, -1]
            spread = norm.ppf(levels[-1]) - norm.ppf(levels[0])
            std = (upper - lower) / spread if spread > 0 else None
            return Summary(mean=median, std=std, lower=lower, upper=upper)

        if method == "mixture":
            k = head.n_components
            w = softmax(raw[:, :k], axis=1)
            means = _location(raw[:, k:2 * k], self.model)
            sigmas = _softplus(raw[:, 2 * k:]) + SIGMA_FLOOR
            mean = np.sum(w * means, axis=1)
            var = np.sum(w * (sigmas ** 2 + means ** 2), axis=1) - mean ** 2
            lower = np.array([mixture_quantile(1.0 - tail, *row) for row in zip(w, means, sigmas)])
            upper = np.array([mixture_quantile(tail, *row) for row in zip(w, means, sigmas)])
            return Summary(mean=mean, std=np.sqrt(np.maximum(var, 0.0)), lower=lower, upper=upper)

        if method == "evidential":
            p = self.model.nig(raw).values()
            dec = decompose(p)
            ci = predictive_interval(p, self.level)
            samples = None
            if self.crps_mode == "student_t_sampled":
                samples = sample_predictive(p, self.crps_samples, np.random.default_rng(self.seed))
            return Summary(mean=dec.mean, std=dec.total_std, lower=ci.lower, upper=ci.upper,
                           aleatoric=dec.aleatoric, epistemic=dec.epistemic, samples=samples)

        raise ContractError(f"no predictive summary for method '{method}'")

    def predict(self, dataset: SequenceDataset, stats: NormStats,
                calibration: Optional[CalibrationSet] = None) -> List[PredictionRecord]:
        try:
            logging.info("Predicting %s on %s/%s (%d windows)", self.model.method, dataset.symbol,
                         dataset.split, len(dataset))
            raw = self.model.predict_raw(self.params, dataset.windows)
            s = self.summarize(raw, calibration, dataset.targets)

            def back(values, kind):
                return np.full(len(dataset), NA) if values is None else denormalize(values, stats, kind)

            mean = back(s.mean, "mean")
            std = back(s.std, "std")
            lower = back(s.lower, "bound")
            upper = back(s.upper, "bound")
            aleatoric = back(s.aleatoric, "variance")
            epistemic = back(s.epistemic, "variance")
            total = std ** 2

            dates = np.datetime_as_string(dataset.dates, unit="D")
            return [
                PredictionRecord(
                    symbol=dataset.symbol, index=int(i), date=str(d), method=self.model.method,
                    target_scaled=float(t), actual_return=float(a), mean=float(m), std=float(sd),
                    lower=float(lo), upper=float(up), aleatoric=float(al), epistemic=float(ep),
                    total_variance=float(tv),
                )
                for i, d, t, a, m, sd, lo, up, al, ep, tv in zip(
                    dataset.positions, dates, dataset.targets, dataset.actual_returns,
                    mean, std, lower, upper, aleatoric, epistemic, total,
                )
            ]

        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)

    def sampled_crps(self, dataset: SequenceDataset, stats: NormStats) -> Optional[float]:
        """Mean CRPS of Student-t predictive draws (evidential only), in return units."""
        if self.model.method != "evidential" or self.crps_mode != "student_t_sampled":
            return None
        raw = self.model.predict_raw(self.params, dataset.windows)
        samples = self.summarize(raw).samples
        draws = denormalize(samples, stats, "mean")
        return float(np.mean(crps_sample(draws, dataset.actual_returns)))

    def calibration_from(self, dataset: SequenceDataset) -> CalibrationSet:
        """Absolute residuals of the point forecast on a held-out split (model scale)."""
        raw = self.model.predict_raw(self.params, dataset.windows)
        return CalibrationSet.from_residuals(_location(raw[:, 0], self.model), dataset.targets)
