import numpy as np
import pytest

from src.components.data_ingestion import PriceSeries, write_prices
from src.pipeline.train_pipeline import ExperimentConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def prices_csv(tmp_path):
    """Two interleaved symbols, one row per day."""
    path = tmp_path / "prices.csv"
    path.write_text(
        "date,symbol,close\n"
        "2023-01-02,AAA,100\n"
        "2023-01-02,BBB,50\n"
        "2023-01-03,AAA,110\n"
        "2023-01-03,BBB,55\n"
        "2023-01-04,AAA,99\n"
        "2023-01-04,BBB,52.5\n"
    )
    return path


@pytest.fixture
def tiny_config(tmp_path):
    """A two-symbol synthetic experiment small enough to train in seconds."""
    return ExperimentConfig(
        synthetic_symbols=2,
        synthetic_days=300,
        cutoff_date="2024-01-01",
        methods=["mse", "evidential"],
        output_dir=str(tmp_path / "run"),
        lookback_window=10,
        hidden_dimensions=4,
        batch_size=64,
        maximum_epochs=2,
        early_stopping_patience=2,
    )


@pytest.fixture
def random_walk_csv(tmp_path):
    rng = np.random.default_rng(3)
    dates = np.datetime64("2023-01-01", "D") + np.arange(300)
    series = [
        PriceSeries(symbol=s, dates=dates, closes=100.0 * np.exp(np.cumsum(rng.normal(0, 0.01, 300))))
        for s in ("AAA", "BBB")
    ]
    path = tmp_path / "walk.csv"
    write_prices(series, str(path))
    return path
