"""
Directional long/short backtest on next-day return forecasts, with an
optional per-symbol uncertainty filter that skips the most uncertain days.
"""
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.components.model_evaluation import TradingMetrics, trading_metrics
from src.config_schema import TRADE_LOG_COLUMNS
from src.exception import ContractError
from src.logger import logging
from src.utils import percentile

BPS = 100.0


@dataclass(frozen=True)
class TradeRecord:
    symbol: str
    index: int
    signal: int
    predicted: float
    actual: float
    pnl_bps: float
    uncertainty: Optional[float] = None
    filtered: bool = False


def generate_signals(predicted) -> np.ndarray:
    """+1 when the predicted return is > 0, otherwise −1 (zero goes short)."""
    predicted = np.asarray(predicted, dtype=np.float64)
    if np.any(~np.isfinite(predicted)):
        raise ContractError("signals need finite predictions")
    return np.where(predicted > 0, 1, -1).astype(np.int64)


def compute_pnl(signals, actuals) -> np.ndarray:
    signals = np.asarray(signals, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    if signals.shape != actuals.shape:
        raise ContractError(f"length mismatch: {signals.shape} vs {actuals.shape}")
    return signals * actuals * BPS


def build_records(symbol: str, predicted, actuals, uncertainties=None, indices=None) -> List[TradeRecord]:
    predicted = np.asarray(predicted, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    signals = generate_signals(predicted)
    pnl = compute_pnl(signals, actuals)
    if indices is None:
        indices = np.arange(predicted.size)
    if uncertainties is None:
        uncertainties = [None] * predicted.size
    elif np.size(uncertainties) != predicted.size:
        raise ContractError("uncertainties must align with predictions")
    return [
        TradeRecord(symbol, int(i), int(s), float(p), float(a), float(x),
                    None if u is None else float(u))
        for i, s, p, a, x, u in zip(indices, signals, predicted, actuals, pnl, uncertainties)
    ]


def uncertainty_filter(records: Sequence[TradeRecord], pct: float = 75.0,
                       require_uncertainty: bool = True) -> List[TradeRecord]:
    """
    Per symbol, zero the signal (and pnl) of records whose uncertainty is at or
    above the ``pct`` percentile of that symbol's uncertainties.
    """
    if not 0.0 <= pct <= 100.0:
        raise ContractError(f"percentile {pct} outside [0, 100]")
    missing = [r for r in records if r.uncertainty is None or not np.isfinite(r.uncertainty)]
    if missing:
        if require_uncertainty:
            raise ContractError(f"{len(missing)} records lack an uncertainty value")
        return list(records)

    thresholds = {}
    for symbol in {r.symbol for r in records}:
        thresholds[symbol] = percentile([r.uncertainty for r in records if r.symbol == symbol], pct)
    out = []
    for r in records:
        if r.uncertainty >= thresholds[r.symbol]:
            out.append(replace(r, signal=0, pnl_bps=0.0, filtered=True))
        else:
            out.append(r)
    return out


@dataclass(frozen=True)
class BacktestResult:
    records: List[TradeRecord]
    filtered_records: List[TradeRecord]
    unfiltered: TradingMetrics
    filtered: TradingMetrics
    filtered_all_days: TradingMetrics

    def trade_log(self) -> pd.DataFrame:
        """The unfiltered strategy, one row per day; ``filtered`` marks days the filter skips."""
        rows = [
            {
                "symbol": r.symbol, "index": r.index, "signal": r.signal,
                "predicted": r.predicted, "actual": r.actual, "pnl_bps": r.pnl_bps,
                "uncertainty": np.nan if r.uncertainty is None else r.uncertainty,
                "filtered": int(f.filtered),
            }
            for r, f in zip(self.records, self.filtered_records)
        ]
        return pd.DataFrame.from_records(rows, columns=TRADE_LOG_COLUMNS)


def aggregate_all_days(filtered_records: Sequence[TradeRecord]) -> TradingMetrics:
    """Metrics over every day (skipped days as 0 pnl); trade count and win rate over executed trades."""
    pnl = np.array([r.pnl_bps for r in filtered_records])
    executed = np.array([r.pnl_bps for r in filtered_records if r.signal != 0])
    base = trading_metrics(pnl)
    return replace(
        base,
        n_trades=int(executed.size),
        win_rate=float(np.mean(executed > 0)) if executed.size else float("nan"),
    )


def run_backtest(symbol: str, predicted, actuals, uncertainties=None, pct: float = 75.0,
                 indices=None) -> BacktestResult:
    """Unfiltered strategy plus both aggregations of the filtered one."""
    records = build_records(symbol, predicted, actuals, uncertainties, indices)
    filtered_records = uncertainty_filter(records, pct, require_uncertainty=uncertainties is not None)
    executed = [r.pnl_bps for r in filtered_records if r.signal != 0]
    logging.info("%s: %d of %d days kept after the uncertainty filter", symbol, len(executed), len(records))
    return BacktestResult(
        records=records,
        filtered_records=filtered_records,
        unfiltered=trading_metrics([r.pnl_bps for r in records]),
        filtered=trading_metrics(executed),
        filtered_all_days=aggregate_all_days(filtered_records),
    )
