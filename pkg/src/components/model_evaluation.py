"""
Forecast evaluation: accuracy, probabilistic calibration and trading metrics.

NA (no value for this method, or undefined for this input) is carried as NaN
in memory, ``null`` in JSON and the literal ``NA`` in CSV tables.
"""
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.special import erf
from sklearn.metrics import mean_absolute_error, mean_squared_error

from src.config_schema import (
    ACCURACY_COLUMNS, PROBABILISTIC_COLUMNS, TRADING_COLUMNS,
)
from src.exception import ContractError
from src.logger import logging
from src.utils import pearson_or_nan

NA = float("nan")
TRADING_DAYS = 252
INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ContractError("empty inputs")
    return a, b


@dataclass(frozen=True)
class AccuracyMetrics:
    rmse: float
    mae: float
    pearson_corr: float


def accuracy_metrics(preds, actuals) -> AccuracyMetrics:
    preds, actuals = _pair(preds, actuals)
    pearson = pearson_or_nan(preds, actuals) if preds.size >= 2 else NA
    return AccuracyMetrics(
        rmse=math.sqrt(mean_squared_error(actuals, preds)),
        mae=float(mean_absolute_error(actuals, preds)),
        pearson_corr=pearson,
    )


def normal_cdf(z):
    return 0.5 * (1.0 + erf(np.asarray(z, dtype=np.float64) / math.sqrt(2.0)))


def crps_gaussian(mu, sigma, y):
    """σ·(z(2Φ(z) − 1) + 2φ(z) − 1/√π) with z = (y − μ)/σ, elementwise."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise ContractError("crps_gaussian needs sigma > 0")
    z = (y - mu) / sigma
    pdf = INV_SQRT_2PI * np.exp(-0.5 * z * z)
    out = sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * pdf - INV_SQRT_PI)
    return float(out) if out.ndim == 0 else out


def crps_sample(samples, y):
    """
    Ensemble CRPS E|X − y| − ½E|X − X′| from draws along axis 0,
    using the sorted-sample identity for the second term.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64), axis=0)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ContractError("crps_sample needs at least one draw")
    first = np.mean(np.abs(x - y), axis=0)
    weights = (2.0 * np.arange(1, n + 1) - n - 1).reshape((n,) + (1,) * (x.ndim - 1))
    spread = np.sum(weights * x, axis=0) / (n * n)
    out = first - spread
    return float(out) if np.ndim(out) == 0 else out


def picp(lower, upper, actuals) -> float:
    lower, upper = _pair(lower, upper)
    _, actuals = _pair(lower, actuals)
    return float(np.mean((actuals >= lower) & (actuals <= upper)))


def sharpness(lower, upper) -> float:
    lower, upper = _pair(lower, upper)
    return float(np.mean(upper - lower))


def unc_err_corr(sigmas, abs_errors) -> float:
    sigmas, abs_errors = _pair(sigmas, abs_errors)
    return pearson_or_nan(sigmas, abs_errors) if sigmas.size >= 2 else NA


@dataclass(frozen=True)
class ProbabilisticMetrics:
    crps: float = NA
    picp_95: float = NA
    sharpness_95: float = NA
    unc_err_corr: float = NA


def probabilistic_metrics(mean, std, lower, upper, actuals, crps_values=None,
                          with_crps: bool = True) -> ProbabilisticMetrics:
    """
    All four probabilistic metrics. CRPS uses the Gaussian approximation
    (mean, std) unless ``crps_values`` are given; ``with_crps=False`` reports it as NA.
    """
    mean, actuals = _pair(mean, actuals)
    std = np.asarray(std, dtype=np.float64).ravel()
    if not with_crps:
        crps = NA
    elif crps_values is None:
        crps = float(np.mean(crps_gaussian(mean, std, actuals))) if np.all(std > 0) else NA
    else:
        crps = float(np.mean(crps_values))
    return ProbabilisticMetrics(
        crps=crps,
        picp_95=picp(lower, upper, actuals),
        sharpness_95=sharpness(lower, upper),
        unc_err_corr=unc_err_corr(std, np.abs(actuals - mean)),
    )


@dataclass(frozen=True)
class TradingMetrics:
    n_trades: int = 0
    daily_sharpe: float = NA
    annual_sharpe: float = NA
    annual_sortino: float = NA
    max_drawdown_bps: float = NA
    calmar: float = NA
    win_rate: float = NA


def max_drawdown(cumulative) -> float:
    """min over t of (cum_t − running max); 0 or negative."""
    cumulative = np.asarray(cumulative, dtype=np.float64)
    if cumulative.size == 0:
        raise ContractError("max_drawdown of an empty path")
    return float(np.min(cumulative - np.maximum.accumulate(cumulative)))


def trading_metrics(pnl, trading_days_per_year: int = TRADING_DAYS) -> TradingMetrics:
    """
    Per-trade pnl (bps). Sharpe uses the sample std; Sortino the population std
    of strictly negative pnl. The drawdown path starts from 0 before the first trade.
    """
    pnl = np.asarray(pnl, dtype=np.float64).ravel()
    n = pnl.size
    if n < 2:
        logging.warning("trading_metrics: %d trade(s), ratios reported as NA", n)
        win = float(np.mean(pnl > 0)) if n else NA
        return TradingMetrics(n_trades=n, win_rate=win)

    ann = math.sqrt(trading_days_per_year)
    mu = float(np.mean(pnl))
    sd = float(np.std(pnl, ddof=1))
    daily = mu / sd if sd > 0 else NA

    downside = pnl[pnl < 0]
    down_sd = float(np.std(downside)) if downside.size else 0.0
    sortino = mu / down_sd * ann if down_sd > 0 else NA

    dd = max_drawdown(np.concatenate([[0.0], np.cumsum(pnl)]))
    calmar = mu * trading_days_per_year / abs(dd) if dd < 0 else NA

    return TradingMetrics(
        n_trades=n,
        daily_sharpe=daily,
        annual_sharpe=daily * ann,
        annual_sortino=sortino,
        max_drawdown_bps=dd,
        calmar=calmar,
        win_rate=float(np.mean(pnl > 0)),
    )


def _floats(obj) -> Dict[str, float]:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _from_payload(cls, payload: Optional[dict]):
    payload = payload or {}
    values = {}
    for f in fields(cls):
        v = payload.get(f.name)
        if f.name == "n_trades":
            values[f.name] = int(v or 0)
        else:
            values[f.name] = NA if v is None else float(v)
    return cls(**values)


@dataclass(frozen=True)
class MetricsRow:
    symbol: str
    method: str
    accuracy: AccuracyMetrics
    probabilistic: ProbabilisticMetrics = field(default_factory=ProbabilisticMetrics)
    trading: TradingMetrics = field(default_factory=TradingMetrics)
    filtered: TradingMetrics = field(default_factory=TradingMetrics)
    filtered_all_days: TradingMetrics = field(default_factory=TradingMetrics)

    def accuracy_record(self) -> dict:
        return {"symbol": self.symbol, "method": self.method, **_floats(self.accuracy)}

    def probabilistic_record(self) -> dict:
        return {"symbol": self.symbol, "method": self.method, **_floats(self.probabilistic)}

    def trading_record(self) -> dict:
        record = {"symbol": self.symbol, "method": self.method, **_floats(self.trading)}
        for prefix, metrics in (("filtered_", self.filtered), ("filtered_all_days_", self.filtered_all_days)):
            record.update({prefix + k: v for k, v in _floats(metrics).items()})
        return record

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsRow":
        return cls(
            symbol=payload["symbol"],
            method=payload["method"],
            accuracy=_from_payload(AccuracyMetrics, payload.get("accuracy")),
            probabilistic=_from_payload(ProbabilisticMetrics, payload.get("probabilistic")),
            trading=_from_payload(TradingMetrics, payload.get("trading")),
            filtered=_from_payload(TradingMetrics, payload.get("filtered")),
            filtered_all_days=_from_payload(TradingMetrics, payload.get("filtered_all_days")),
        )


@dataclass
class MetricsReport:
    rows: List[MetricsRow] = field(default_factory=list)
    notes: Dict[str, str] = field(default_factory=lambda: {
        "pnl_units": "basis points per trade",
        "calmar": "annualized mean pnl (mean * 252) / |max drawdown|, in pnl units",
        "sharpe_std": "sample (n-1)",
        "sortino_downside_std": "population std of strictly negative pnl",
    })

    @property
    def symbols(self) -> List[str]:
        return sorted({r.symbol for r in self.rows})

    def table(self, family: str, symbol: Optional[str] = None) -> pd.DataFrame:
        columns = {
            "accuracy": ACCURACY_COLUMNS,
            "probabilistic": PROBABILISTIC_COLUMNS,
            "trading": TRADING_COLUMNS,
        }
        if family not in columns:
            raise ContractError(f"unknown metrics family '{family}'")
        rows = [r for r in self.rows if symbol is None or r.symbol == symbol]
        records = [getattr(r, f"{family}_record")() for r in rows]
        return pd.DataFrame.from_records(records, columns=columns[family])

    def to_dict(self) -> dict:
        return {"notes": dict(self.notes), "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        report = cls(rows=[MetricsRow.from_dict(r) for r in payload.get("rows", [])])
        if "notes" in payload:
            report.notes = dict(payload["notes"])
        return report
