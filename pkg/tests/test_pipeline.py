import json
import os
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from src.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main
from src.components.model_evaluation import (
    AccuracyMetrics, MetricsReport, MetricsRow, ProbabilisticMetrics, TradingMetrics,
)
from src.exception import ConfigurationError, ContractError
from src.pipeline import train_pipeline
from src.pipeline.report_pipeline import emit_report, load_report
from src.pipeline.train_pipeline import (
    ExperimentConfig, predictions_path, resolve_n_jobs, run_experiment, trades_path,
)
from src.utils import load_object


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"learning_rate": 0.01, "learnng_rate": 0.1})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"methods": ["mse", "lasso"]})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"learning_rate": -1.0})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_json("/nonexistent/config.json")


def test_reference_config_loads():
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    cfg = ExperimentConfig.from_json(os.path.join(here, "configs", "reference.json"))
    assert cfg.lookback_window == 50 and cfg.train_config().batch_size == 128
    head = cfg.model_for("evidential").head
    assert head.bounded_mean and head.bound_scale == pytest.approx(3.0 * cfg.target_scale)


def test_patchformer_patch_size_from_frequency():
    cfg = ExperimentConfig(backbone="patchformer").validate()
    model = cfg.model_for("evidential")
    assert model.patchformer_spec.patch_size == 32
    assert model.lookback == 50


def test_n_jobs_environment_override(monkeypatch):
    monkeypatch.setenv("PROBFM_N_JOBS", "3")
    assert resolve_n_jobs(ExperimentConfig()) == 3
    monkeypatch.setenv("PROBFM_N_JOBS", "many")
    with pytest.raises(ConfigurationError):
        resolve_n_jobs(ExperimentConfig())


def _row(method):
    return MetricsRow(
        symbol="AAA", method=method,
        accuracy=AccuracyMetrics(0.01, 0.008, 0.1),
        probabilistic=ProbabilisticMetrics() if method == "mse" else ProbabilisticMetrics(0.005, 0.94, 0.05, 0.2),
        trading=TradingMetrics(n_trades=50, daily_sharpe=0.05, annual_sharpe=0.79),
    )


def test_emit_report_writes_one_table_per_family(tmp_path):
    report = MetricsReport(rows=[_row("mse"), _row("evidential")])
    written = emit_report(report, str(tmp_path), ["csv", "json"])
    names = sorted(os.path.basename(p) for p in written)
    assert names == ["AAA_accuracy.csv", "AAA_probabilistic.csv", "AAA_trading.csv", "metrics.json"]
    for family in ("accuracy", "probabilistic", "trading"):
        assert len(pd.read_csv(tmp_path / f"AAA_{family}.csv")) == 2
    assert "NA" in (tmp_path / "AAA_probabilistic.csv").read_text()

    payload = json.loads((tmp_path / "metrics.json").read_text())
    assert payload["rows"][0]["probabilistic"]["crps"] is None
    restored = load_report(str(tmp_path / "metrics.json"))
    assert restored.rows[1].probabilistic == report.rows[1].probabilistic
    assert restored.rows[0].trading.n_trades == 50


def test_emit_report_contract(tmp_path):
    with pytest.raises(ContractError):
        emit_report(MetricsReport(), str(tmp_path))
    with pytest.raises(ContractError):
        emit_report(MetricsReport(rows=[_row("mse")]), str(tmp_path), ["xlsx"])


def test_run_experiment_end_to_end(tiny_config):
    result = run_experiment(tiny_config)
    assert result.exit_code == 0
    assert len(result.cells) == 4 and not result.failed
    reports = tiny_config.path("reports")
    for symbol in ("SYM01", "SYM02"):
        prob = pd.read_csv(os.path.join(reports, f"{symbol}_probabilistic.csv"))
        assert prob.loc[prob["method"] == "mse", "crps"].isna().all()
        assert prob.loc[prob["method"] == "evidential", "picp_95"].between(0, 1).all()
        assert os.path.exists(trades_path(tiny_config, symbol, "evidential"))

    manifest = json.loads(open(tiny_config.path("run_manifest.json")).read())
    assert manifest["n_failed"] == 0 and len(manifest["cells"]) == 4
    assert os.path.exists(tiny_config.path("artifacts", "SYM01", "mse", "checkpoint.json"))


def test_runs_are_reproducible(tiny_config, tmp_path):
    first = tiny_config
    second = ExperimentConfig(**{**first.to_dict(), "output_dir": str(tmp_path / "again")})
    run_experiment(first)
    run_experiment(second)
    for method in first.methods:
        a = open(predictions_path(first, "SYM01", method)).read()
        b = open(predictions_path(second, "SYM01", method)).read()
        assert a == b
    for family in ("accuracy", "probabilistic", "trading"):
        name = f"SYM01_{family}.csv"
        assert open(first.path("reports", name)).read() == open(second.path("reports", name)).read()


def test_bounded_evidential_means_stay_within_three_sigma(tiny_config):
    assert tiny_config.model_for("evidential").head.bounded_mean
    assert tiny_config.model_for("evidential").head.bound_scale == pytest.approx(300.0)
    assert not tiny_config.model_for("mse").head.bounded_mean
    assert run_experiment(tiny_config).exit_code == 0
    prep = load_object(tiny_config.path("artifacts", "preprocessing.pkl"))
    for symbol in ("SYM01", "SYM02"):
        stats = prep.stats_for(symbol)
        frame = pd.read_csv(predictions_path(tiny_config, symbol, "evidential"))
        assert ((frame["mean"] - stats.mean).abs() <= 3.0 * stats.std + 1e-9).all()


def test_cached_prices_follow_the_seed(tiny_config):
    first, _ = train_pipeline.prepare(tiny_config)
    reseeded = replace(tiny_config, random_seed=5)
    second, _ = train_pipeline.prepare(reseeded)
    assert not np.array_equal(first["SYM01"].train.targets, second["SYM01"].train.targets)
    again, _ = train_pipeline.prepare(reseeded)
    np.testing.assert_array_equal(again["SYM01"].train.targets, second["SYM01"].train.targets)


def test_stages_run_separately(tiny_config):
    run_experiment(tiny_config, ("train",), command="train")
    assert not os.path.exists(predictions_path(tiny_config, "SYM01", "mse"))
    run_experiment(tiny_config, ("evaluate",), command="evaluate")
    assert os.path.exists(predictions_path(tiny_config, "SYM01", "mse"))
    result = run_experiment(tiny_config, ("backtest",), command="backtest")
    assert result.exit_code == 0 and len(result.report.rows) == 4


def test_failing_cell_does_not_stop_others(tiny_config, monkeypatch):
    original = train_pipeline.PredictionPipeline.predict

    def flaky(self, dataset, stats, calibration=None):
        if self.model.method == "evidential" and dataset.symbol == "SYM02":
            raise RuntimeError("boom")
        return original(self, dataset, stats, calibration)

    monkeypatch.setattr(train_pipeline.PredictionPipeline, "predict", flaky)
    result = run_experiment(tiny_config)
    assert result.exit_code == 2
    assert [(c.symbol, c.method, c.stage) for c in result.failed] == [("SYM02", "evidential", "evaluate")]
    assert len(result.report.rows) == 3


def _write_config(tmp_path, cfg, **extra):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**cfg.to_dict(), **extra}))
    return str(path)


def test_cli_exit_codes(tiny_config, tmp_path):
    assert main(["run-all", "--config", _write_config(tmp_path, tiny_config, dropout=0.3)]) == EXIT_CONFIG
    assert main(["report", "--out", str(tmp_path / "empty")]) == EXIT_CONFIG
    assert main(["train", "--methods", "mse,ridge"]) == EXIT_CONFIG

    config = _write_config(tmp_path, tiny_config)
    assert main(["run-all", "--config", config, "--methods", "mse"]) == EXIT_OK
    assert main(["report", "--config", config]) == EXIT_OK
    assert os.path.exists(tiny_config.path("reports", "SYM01_trading.csv"))


def test_cli_reports_partial_failure(tiny_config, tmp_path, monkeypatch):
    monkeypatch.setattr(train_pipeline.ModelTrainer, "initiate_model_trainer",
                        lambda *args, **kwargs: (_ for _ in ()).throw(RuntimeError("no")))
    assert main(["run-all", "--config", _write_config(tmp_path, tiny_config)]) == EXIT_PARTIAL


def test_synth_writes_prices(tiny_config, tmp_path, capsys):
    assert main(["synth", "--config", _write_config(tmp_path, tiny_config), "--seed", "7"]) == EXIT_OK
    path = capsys.readouterr().out.strip()
    assert path == tiny_config.path("data", "prices.csv")
    frame = pd.read_csv(path)
    assert sorted(frame["symbol"].unique()) == ["SYM01", "SYM02"]
