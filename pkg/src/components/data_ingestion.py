import os
import sys
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config_schema import PRICE_COLUMNS
from src.exception import ContractError, CustomException, DataValidationError
from src.logger import logging
from src.utils import load_json, save_json

SYNTHETIC_KINDS = ("heteroscedastic_cubic", "iid_gaussian_returns", "random_walk_prices")


@dataclass(frozen=True)
class PriceSeries:
    symbol: str
    dates: np.ndarray
    closes: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        closes = np.asarray(self.closes, dtype=np.float64)
        if dates.shape != closes.shape or dates.ndim != 1:
            raise ContractError(f"{self.symbol}: dates and closes must be equal-length vectors")
        if np.any(np.diff(dates.astype(np.int64)) <= 0):
            raise ContractError(f"{self.symbol}: dates must be strictly increasing")
        if np.any(~np.isfinite(closes)) or np.any(closes <= 0):
            raise ContractError(f"{self.symbol}: closes must be positive and finite")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "closes", closes)

    def __len__(self):
        return self.closes.size


@dataclass(frozen=True)
class ReturnSeries:
    """Log returns; ``dates[i]`` is the date of the later price in each pair."""
    symbol: str
    dates: np.ndarray
    values: np.ndarray

    def __len__(self):
        return np.size(self.values)


@dataclass(frozen=True)
class SyntheticRegression:
    """Direct-feature heteroscedastic data: train x in [-4, 4], test x in [-6, 6]."""
    x_train: np.ndarray
    y_train: np.ndarray
    sigma_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    sigma_test: np.ndarray


def load_prices(path) -> List[PriceSeries]:
    """
    Read a ``date,symbol,close`` CSV into one series per symbol.
    Invalid rows are reported together, by their line number in the file.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise DataValidationError(f"{path}: file is empty")
    except Exception as e:
        raise CustomException(e, sys)

    missing = [c for c in PRICE_COLUMNS if c not in df.columns]
    if missing:
        raise DataValidationError(f"{path}: missing columns {missing}")
    if df.empty:
        raise DataValidationError(f"{path}: no data rows")

    lines = df.index.to_numpy() + 2
    dates = pd.to_datetime(df["date"].str.strip(), format="%Y-%m-%d", errors="coerce")
    closes = pd.to_numeric(df["close"].str.strip(), errors="coerce")
    symbols = df["symbol"].str.strip()

    problems = []
    bad_rows = []
    for line, raw_date, date, raw_close, close, symbol in zip(
        lines, df["date"], dates, df["close"], closes, symbols
    ):
        if pd.isna(date):
            problems.append(f"line {line}: unparseable date '{raw_date}'")
        elif pd.isna(close):
            problems.append(f"line {line}: non-numeric close '{raw_close}'")
        elif not np.isfinite(close) or close <= 0:
            problems.append(f"line {line}: close must be positive, got {raw_close}")
        elif not symbol:
            problems.append(f"line {line}: empty symbol")
        else:
            continue
        bad_rows.append(int(line))
    if problems:
        raise DataValidationError(f"{path}: " + "; ".join(problems), rows=bad_rows)

    frame = pd.DataFrame({"line": lines, "date": dates, "symbol": symbols, "close": closes})
    series = []
    for symbol, group in frame.groupby("symbol", sort=True):
        group = group.sort_values("date", kind="mergesort")
        dup = group["date"].duplicated(keep=False)
        if dup.any():
            rows = group.loc[dup, "line"].astype(int).tolist()
            raise DataValidationError(f"{path}: duplicate dates for {symbol} on lines {rows}", rows=rows)
        series.append(PriceSeries(
            symbol=str(symbol),
            dates=group["date"].to_numpy().astype("datetime64[D]"),
            closes=group["close"].to_numpy(dtype=np.float64),
        ))
    logging.info("Loaded %d price series from %s", len(series), path)
    return series


def write_prices(series: Sequence[PriceSeries], path) -> str:
    try:
        frames = [
            pd.DataFrame({
                "date": np.datetime_as_string(s.dates, unit="D"),
                "symbol": s.symbol,
                "close": s.closes,
            })
            for s in series
        ]
        dir_path = os.path.dirname(path)
        if dir_path:
            os.makedirs(dir_path, exist_ok=True)
        pd.concat(frames, ignore_index=True)[PRICE_COLUMNS].to_csv(path, index=False, float_format="%.10g")
        return path
    except Exception as e:
        raise CustomException(e, sys)


def _cubic_sigma(x):
    return 0.1 + 0.2 * np.abs(x)


def gen_synthetic(kind: str, n: int, seed: int, start_date: str = "2018-01-01",
                  symbol: str = "SYN", start_price: float = 100.0, volatility: float = 0.01):
    """
    Deterministic synthetic data for checks and demos.

    heteroscedastic_cubic -> SyntheticRegression (y = x**3/10 + eps*sigma(x))
    iid_gaussian_returns  -> ReturnSeries
    random_walk_prices    -> PriceSeries (geometric, so always positive)
    """
    if kind not in SYNTHETIC_KINDS:
        raise ContractError(f"unknown synthetic kind '{kind}', expected one of {SYNTHETIC_KINDS}")
    if n < 100:
        raise ContractError(f"synthetic series need n >= 100, got {n}")
    rng = np.random.default_rng(seed)

    if kind == "heteroscedastic_cubic":
        x_train = rng.uniform(-4.0, 4.0, size=n)
        x_test = rng.uniform(-6.0, 6.0, size=n)
        s_train, s_test = _cubic_sigma(x_train), _cubic_sigma(x_test)
        return SyntheticRegression(
            x_train=x_train,
            y_train=x_train ** 3 / 10.0 + rng.standard_normal(n) * s_train,
            sigma_train=s_train,
            x_test=x_test,
            y_test=x_test ** 3 / 10.0 + rng.standard_normal(n) * s_test,
            sigma_test=s_test,
        )

    dates = np.datetime64(start_date, "D") + np.arange(n)
    if kind == "iid_gaussian_returns":
        return ReturnSeries(symbol=symbol, dates=dates, values=rng.normal(0.0, volatility, size=n))

    steps = rng.normal(0.0, volatility, size=n - 1)
    closes = start_price * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))
    return PriceSeries(symbol=symbol, dates=dates, closes=closes)


def gen_universe(n_symbols: int, n_days: int, seed: int, cutoff_date: str,
                 test_fraction: float = 0.2) -> List[PriceSeries]:
    """
    ``n_symbols`` geometric random walks with GARCH(1,1)-style volatility
    clustering. Dates are daily and placed so the last ``test_fraction`` of
    each series falls on or after ``cutoff_date``.
    """
    if n_symbols < 1:
        raise ContractError("n_symbols must be >= 1")
    if n_days < 100:
        raise ContractError(f"synthetic series need n >= 100, got {n_days}")
    start = np.datetime64(cutoff_date, "D") - int(round((1.0 - test_fraction) * n_days))
    dates = start + np.arange(n_days)

    universe = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_symbols)):
        rng = np.random.default_rng(child)
        base_vol = rng.uniform(0.01, 0.04)
        omega, a, b = base_vol ** 2 * 0.05, 0.1, 0.85
        var = base_vol ** 2
        shocks = rng.standard_normal(n_days - 1)
        returns = np.empty(n_days - 1)
        for t, z in enumerate(shocks):
            returns[t] = np.sqrt(var) * z
            var = omega + a * returns[t] ** 2 + b * var
        closes = rng.uniform(20.0, 200.0) * np.exp(np.concatenate([[0.0], np.cumsum(returns)]))
        universe.append(PriceSeries(symbol=f"SYM{i + 1:02d}", dates=dates, closes=closes))
    return universe


@dataclass
class DataIngestionConfig:
    raw_data_path: str = os.path.join("data", "prices.csv")
    source_path: Optional[str] = None
    n_symbols: int = 11
    n_days: int = 1500
    cutoff_date: str = "2024-01-01"
    seed: int = 0
    symbols: List[str] = field(default_factory=list)

    @property
    def provenance_path(self) -> str:
        return os.path.splitext(self.raw_data_path)[0] + ".source.json"

    def provenance(self) -> dict:
        """Inputs that determine the working copy; a cached copy is reused only when they match."""
        return {
            "source_path": os.path.abspath(self.source_path) if self.source_path else None,
            "n_symbols": self.n_symbols,
            "n_days": self.n_days,
            "cutoff_date": self.cutoff_date,
            "seed": self.seed,
            "symbols": sorted(self.symbols),
        }


class DataIngestion:
    def __init__(self, config: Optional[DataIngestionConfig] = None):
        self.ingestion_config = config or DataIngestionConfig()

    def cached_series(self) -> Optional[List[PriceSeries]]:
        """The existing working copy if it was written from the same inputs, else None."""
        cfg = self.ingestion_config
        if not (os.path.exists(cfg.raw_data_path) and os.path.exists(cfg.provenance_path)):
            return None
        if load_json(cfg.provenance_path) != cfg.provenance():
            logging.info("Working copy %s was built from other inputs; regenerating", cfg.raw_data_path)
            return None
        return load_prices(cfg.raw_data_path)

    def initiate_data_ingestion(self):
        """Load the configured price file (or generate a synthetic universe) and
        write the working copy to ``raw_data_path``. Returns (series, path)."""
        logging.info("Entered the data ingestion method or component")
        cfg = self.ingestion_config
        try:
            if cfg.source_path:
                series = load_prices(cfg.source_path)
                logging.info("Read %d symbols from %s", len(series), cfg.source_path)
            else:
                series = gen_universe(cfg.n_symbols, cfg.n_days, cfg.seed, cfg.cutoff_date)
                logging.info("Generated synthetic universe: %d symbols x %d days", cfg.n_symbols, cfg.n_days)

            if cfg.symbols:
                wanted = set(cfg.symbols)
                unknown = wanted - {s.symbol for s in series}
                if unknown:
                    logging.warning("Requested symbols not in data: %s", sorted(unknown))
                series = [s for s in series if s.symbol in wanted]

            write_prices(series, cfg.raw_data_path)
            save_json(cfg.provenance_path, cfg.provenance())
            logging.info("Ingestion of the data is completed: %s", cfg.raw_data_path)
            return series, cfg.raw_data_path

        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)
