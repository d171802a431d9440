PRICE_COLUMNS = ["date", "symbol", "close"]

# Method catalogue, in report order.
METHODS = [
    "mse", "huber", "gaussian_nll", "student_t_nll",
    "quantile", "mixture", "conformal_base", "evidential",
]

METHOD_LABELS = {
    "mse": "MSE (Baseline)",
    "huber": "Huber",
    "gaussian_nll": "Gaussian NLL",
    "student_t_nll": "Student-t NLL",
    "quantile": "Quantile Loss",
    "mixture": "Mixture of Distributions",
    "conformal_base": "Adaptive Conformal (MSE)",
    "evidential": "Evidential Regression",
}

POINT_METHODS = {"mse", "huber"}

PREDICTION_COLUMNS = [
    "symbol", "index", "date", "method",
    "target_scaled", "actual_return",
    "mean", "std", "lower", "upper",
    "aleatoric", "epistemic", "total_variance",
]

TRADE_LOG_COLUMNS = [
    "symbol", "index", "signal", "predicted", "actual",
    "pnl_bps", "uncertainty", "filtered",
]

ACCURACY_COLUMNS = ["symbol", "method", "rmse", "mae", "pearson_corr"]

PROBABILISTIC_COLUMNS = [
    "symbol", "method", "crps", "picp_95", "sharpness_95", "unc_err_corr",
]

TRADING_FIELDS = [
    "n_trades", "daily_sharpe", "annual_sharpe", "annual_sortino",
    "max_drawdown_bps", "calmar", "win_rate",
]

TRADING_COLUMNS = (
    ["symbol", "method"]
    + TRADING_FIELDS
    + [f"filtered_{f}" for f in TRADING_FIELDS]
    + [f"filtered_all_days_{f}" for f in TRADING_FIELDS]
)
