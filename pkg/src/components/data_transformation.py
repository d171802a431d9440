import math
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from sklearn.preprocessing import StandardScaler

from src.components.data_ingestion import PriceSeries, ReturnSeries
from src.exception import (
    ConfigurationError, ContractError, CustomException, DegenerateParameterError,
)
from src.logger import logging
from src.utils import percentile, save_object

SPLITS = ("train", "val", "test")
MIN_TRAIN_POINTS = 10


def log_returns(series: PriceSeries) -> ReturnSeries:
    if len(series) < 2:
        raise ContractError(f"{series.symbol}: need at least 2 prices for returns, got {len(series)}")
    values = np.log(series.closes[1:] / series.closes[:-1])
    return ReturnSeries(symbol=series.symbol, dates=series.dates[1:], values=values)


@dataclass(frozen=True)
class SplitSegments:
    symbol: str
    train: ReturnSeries
    val: ReturnSeries
    test: ReturnSeries

    def segment(self, split: str) -> ReturnSeries:
        return getattr(self, split)


def _take(r: ReturnSeries, sl: slice) -> ReturnSeries:
    return ReturnSeries(symbol=r.symbol, dates=r.dates[sl], values=r.values[sl])


def temporal_split(returns: ReturnSeries, cutoff_date, val_fraction: float = 0.2) -> SplitSegments:
    """
    test = dates >= cutoff; the last ``val_fraction`` (rounded half-up) of the
    pre-cutoff points is validation, the rest is train. Order is preserved.
    """
    if len(returns) == 0:
        raise ContractError(f"{returns.symbol}: empty return series")
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigurationError(f"val_fraction {val_fraction} outside [0, 1)")
    cutoff = np.datetime64(cutoff_date, "D")
    n_pre = int(np.searchsorted(returns.dates, cutoff, side="left"))
    n_val = int(math.floor(n_pre * val_fraction + 0.5))
    n_train = n_pre - n_val
    if n_train <= 0:
        raise ConfigurationError(f"{returns.symbol}: no training data before {cutoff_date}")
    if n_pre == len(returns):
        raise ConfigurationError(f"{returns.symbol}: no test data on or after {cutoff_date}")
    return SplitSegments(
        symbol=returns.symbol,
        train=_take(returns, slice(0, n_train)),
        val=_take(returns, slice(n_train, n_pre)),
        test=_take(returns, slice(n_pre, None)),
    )


@dataclass(frozen=True)
class NormStats:
    """Per-symbol preprocessing fitted on the train segment only."""
    symbol: str
    mean: float
    std: float
    lower_clip: float
    upper_clip: float
    target_scale: float = 100.0

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateParameterError(f"{self.symbol}: training std must be > 0")
        if self.lower_clip > self.upper_clip:
            raise ContractError(f"{self.symbol}: lower_clip exceeds upper_clip")


def denormalize(values, stats: NormStats, kind: str = "mean") -> np.ndarray:
    """
    Map model-scale outputs back to the return scale.

    mean / bound:  (v / target_scale) * std + mean
    std:           (v / target_scale) * std
    variance:      v * (std / target_scale) ** 2
    """
    v = np.asarray(values, dtype=np.float64)
    unit = stats.std / stats.target_scale
    if kind in ("mean", "bound"):
        return v * unit + stats.mean
    if kind == "std":
        return v * unit
    if kind == "variance":
        return v * unit ** 2
    raise ContractError(f"unknown denormalization kind '{kind}'")


def normalize(values, stats: NormStats) -> np.ndarray:
    """Inverse of ``denormalize(kind="mean")`` for in-range returns."""
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std * stats.target_scale


@dataclass(frozen=True)
class NormalizedSegments:
    symbol: str
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def fit_and_apply_norm(segments: SplitSegments, lower_pct: float = 1.0, upper_pct: float = 99.0,
                       target_scale: float = 100.0) -> Tuple[NormalizedSegments, NormStats, StandardScaler]:
    """Clip every segment to the train [p_lower, p_upper] band, then standardize with train's post-clip moments."""
    train = np.asarray(segments.train.values, dtype=np.float64)
    if train.size < MIN_TRAIN_POINTS:
        raise ContractError(f"{segments.symbol}: train segment needs >= {MIN_TRAIN_POINTS} points, got {train.size}")
    lo, hi = percentile(train, lower_pct), percentile(train, upper_pct)
    clipped = np.clip(train, lo, hi)

    scaler = StandardScaler()
    scaler.fit(clipped.reshape(-1, 1))
    if not scaler.var_[0] > 0:
        raise DegenerateParameterError(f"{segments.symbol}: constant training series, std = 0")

    stats = NormStats(
        symbol=segments.symbol,
        mean=float(scaler.mean_[0]),
        std=float(scaler.scale_[0]),
        lower_clip=lo,
        upper_clip=hi,
        target_scale=target_scale,
    )

    def apply(values):
        values = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
        if values.size == 0:
            return values
        return scaler.transform(values.reshape(-1, 1)).ravel()

    normalized = NormalizedSegments(
        symbol=segments.symbol,
        train=apply(segments.train.values),
        val=apply(segments.val.values),
        test=apply(segments.test.values),
    )
    return normalized, stats, scaler


@dataclass(frozen=True)
class SequenceDataset:
    """
    Sliding windows over one normalized segment. ``targets`` are the next
    normalized value times ``target_scale``; ``actual_returns`` keep the raw,
    unclipped return at the same position for evaluation.
    """
    symbol: str
    split: str
    windows: np.ndarray
    targets: np.ndarray
    actual_returns: np.ndarray
    dates: np.ndarray
    positions: np.ndarray

    def __len__(self):
        return self.targets.size


def make_sequences(values, lookback: int = 50, target_scale: float = 100.0, symbol: str = "",
                   split: str = "train", raw_returns=None, dates=None) -> SequenceDataset:
    values = np.asarray(values, dtype=np.float64)
    if lookback < 1:
        raise ContractError("lookback must be >= 1")
    raw = values if raw_returns is None else np.asarray(raw_returns, dtype=np.float64)
    if dates is None:
        dates = np.full(values.size, np.datetime64("NaT"), dtype="datetime64[D]")
    dates = np.asarray(dates, dtype="datetime64[D]")
    if raw.shape != values.shape or dates.shape != values.shape:
        raise ContractError("raw_returns and dates must align with values")

    n = values.size - lookback
    if n <= 0:
        logging.warning("Skipping %s/%s: segment of %d points is not longer than lookback %d",
                        symbol, split, values.size, lookback)
        return SequenceDataset(
            symbol=symbol, split=split,
            windows=np.zeros((0, lookback)), targets=np.zeros(0), actual_returns=np.zeros(0),
            dates=np.zeros(0, dtype="datetime64[D]"), positions=np.zeros(0, dtype=np.int64),
        )

    positions = np.arange(lookback, values.size)
    windows = np.lib.stride_tricks.sliding_window_view(values, lookback)[:n].copy()
    return SequenceDataset(
        symbol=symbol,
        split=split,
        windows=windows,
        targets=values[positions] * target_scale,
        actual_returns=raw[positions],
        dates=dates[positions],
        positions=positions,
    )


@dataclass(frozen=True)
class SymbolData:
    symbol: str
    stats: NormStats
    train: SequenceDataset
    val: SequenceDataset
    test: SequenceDataset

    def split(self, name: str) -> SequenceDataset:
        return getattr(self, name)


@dataclass
class Preprocessing:
    """Fitted per-symbol state persisted to ``preprocessing.pkl``."""
    stats: Dict[str, NormStats] = field(default_factory=dict)
    scalers: Dict[str, StandardScaler] = field(default_factory=dict)

    def stats_for(self, symbol: str) -> NormStats:
        if symbol not in self.stats:
            raise ContractError(f"no normalization statistics for symbol '{symbol}'")
        return self.stats[symbol]

    def denormalize(self, symbol: str, values, kind: str = "mean") -> np.ndarray:
        return denormalize(values, self.stats_for(symbol), kind)


@dataclass
class DataTransformationConfig:
    preprocessor_obj_file_path: str = os.path.join("artifacts", "preprocessing.pkl")
    cutoff_date: str = "2024-01-01"
    val_fraction: float = 0.2
    lookback: int = 50
    lower_percentile: float = 1.0
    upper_percentile: float = 99.0
    target_scale: float = 100.0


class DataTransformation:
    def __init__(self, config: Optional[DataTransformationConfig] = None):
        self.config = config or DataTransformationConfig()
        self.failures: Dict[str, Exception] = {}

    def transform_symbol(self, series: PriceSeries) -> Tuple[SymbolData, StandardScaler]:
        cfg = self.config
        returns = log_returns(series)
        segments = temporal_split(returns, cfg.cutoff_date, cfg.val_fraction)
        normalized, stats, scaler = fit_and_apply_norm(
            segments, cfg.lower_percentile, cfg.upper_percentile, cfg.target_scale
        )
        datasets = {
            split: make_sequences(
                getattr(normalized, split), cfg.lookback, cfg.target_scale, series.symbol, split,
                raw_returns=segments.segment(split).values, dates=segments.segment(split).dates,
            )
            for split in SPLITS
        }
        return SymbolData(symbol=series.symbol, stats=stats, **datasets), scaler

    def initiate_data_transformation(self, series_list: List[PriceSeries]) -> Dict[str, SymbolData]:
        """
        Per symbol: returns, split, clip/standardize, windows. A symbol that
        fails is logged and recorded in ``self.failures``; the rest continue.
        """
        logging.info("Entered the data transformation component for %d symbols", len(series_list))
        try:
            prepared: Dict[str, SymbolData] = {}
            state = Preprocessing()
            for series in series_list:
                try:
                    data, scaler = self.transform_symbol(series)
                except (ContractError, ConfigurationError, DegenerateParameterError) as e:
                    logging.error("Preprocessing failed for %s: %s", series.symbol, e)
                    self.failures[series.symbol] = e
                    continue
                prepared[series.symbol] = data
                state.stats[series.symbol] = data.stats
                state.scalers[series.symbol] = scaler
                logging.info(
                    "%s: %d train / %d val / %d test samples",
                    series.symbol, len(data.train), len(data.val), len(data.test),
                )

            save_object(self.config.preprocessor_obj_file_path, state)
            logging.info("Saved preprocessing object to %s", self.config.preprocessor_obj_file_path)
            return prepared

        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)


def windows_to_series(dataset: SequenceDataset, target_scale: float = 100.0) -> np.ndarray:
    """Rebuild the normalized segment from the first window plus all targets."""
    if len(dataset) == 0:
        return np.zeros(0)
    return np.concatenate([dataset.windows[0], dataset.targets / target_scale])

