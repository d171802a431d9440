import math

import numpy as np
import pytest

from src.components.backtest import (
    build_records, compute_pnl, generate_signals, run_backtest, uncertainty_filter,
)
from src.config_schema import TRADE_LOG_COLUMNS
from src.exception import ContractError


def test_signals_and_pnl():
    signals = generate_signals([0.3, -0.1, 0.0])
    np.testing.assert_array_equal(signals, [1, -1, -1])
    np.testing.assert_allclose(compute_pnl(signals, [0.01, 0.02, -0.005]), [1.0, -2.0, 0.5])
    with pytest.raises(ContractError):
        generate_signals([np.nan])
    with pytest.raises(ContractError):
        compute_pnl([1, 1], [0.1])


def test_filter_threshold_is_inclusive():
    records = build_records("AAA", [1.0, 1.0, 1.0, 1.0], [0.01] * 4, uncertainties=[1.0, 2.0, 3.0, 4.0])
    kept = uncertainty_filter(records, 75.0)
    assert [r.filtered for r in kept] == [False, False, False, True]
    assert kept[3].signal == 0 and kept[3].pnl_bps == 0.0

    tied = build_records("AAA", [1.0] * 4, [0.01] * 4, uncertainties=[2.0] * 4)
    assert all(r.filtered for r in uncertainty_filter(tied, 75.0))


def test_filter_is_per_symbol():
    records = (build_records("AAA", [1.0] * 4, [0.01] * 4, uncertainties=[1.0, 2.0, 3.0, 4.0])
               + build_records("BBB", [1.0] * 4, [0.01] * 4, uncertainties=[10.0, 20.0, 30.0, 40.0]))
    kept = uncertainty_filter(records, 75.0)
    assert [r.filtered for r in kept] == [False, False, False, True] * 2


def test_filter_needs_uncertainties():
    records = build_records("AAA", [1.0, -1.0], [0.01, 0.02])
    with pytest.raises(ContractError):
        uncertainty_filter(records)
    assert uncertainty_filter(records, require_uncertainty=False) == records
    with pytest.raises(ContractError):
        uncertainty_filter(records, 120.0)


def test_perfect_foresight(rng):
    actual = rng.normal(0.0, 0.01, size=100)
    actual[actual == 0] = 0.001
    result = run_backtest("AAA", actual, actual)
    assert result.unfiltered.win_rate == 1.0
    assert result.unfiltered.max_drawdown_bps == 0.0
    assert result.unfiltered.n_trades == 100


def test_point_forecasts_skip_filter():
    result = run_backtest("AAA", [0.1, -0.2, 0.3], [0.01, -0.01, -0.02])
    assert result.filtered.n_trades == result.unfiltered.n_trades == 3
    assert result.filtered.annual_sharpe == pytest.approx(result.unfiltered.annual_sharpe)
    assert not any(r.filtered for r in result.filtered_records)


def test_filtered_aggregations():
    predicted = [1.0, 1.0, 1.0, 1.0, -1.0]
    actual = [0.01, -0.02, 0.03, 0.01, 0.02]
    unc = [1.0, 2.0, 1.5, 5.0, 0.5]
    result = run_backtest("AAA", predicted, actual, unc, pct=75.0)
    assert [r.filtered for r in result.filtered_records] == [False, True, False, True, False]
    assert result.filtered.n_trades == 3
    assert result.filtered_all_days.n_trades == 3
    assert result.filtered_all_days.win_rate == pytest.approx(2 / 3)
    all_days = [1.0, 0.0, 3.0, 0.0, -2.0]
    assert result.filtered_all_days.daily_sharpe == pytest.approx(np.mean(all_days) / np.std(all_days, ddof=1))

    log = result.trade_log()
    assert list(log.columns) == TRADE_LOG_COLUMNS
    assert log["filtered"].tolist() == [0, 1, 0, 1, 0]
    assert log["pnl_bps"].iloc[3] == pytest.approx(1.0)


def test_trade_log_without_uncertainty():
    log = run_backtest("AAA", [0.1, -0.1], [0.01, 0.01]).trade_log()
    assert log["uncertainty"].isna().all()
    assert math.isclose(log["pnl_bps"].sum(), 0.0, abs_tol=1e-12)
