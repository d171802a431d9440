"""
Experiment orchestration: one JSON configuration, the data stages shared by
all symbols, and an independent (symbol x method) cell per model that trains,
predicts on the test segment and scores the forecasts.
"""
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.components.backtest import run_backtest
from src.components.conformal import ConformalConfig
from src.components.data_ingestion import DataIngestion, DataIngestionConfig
from src.components.data_transformation import (
    DataTransformation, DataTransformationConfig, SymbolData,
)
from src.components.model_evaluation import (
    MetricsReport, MetricsRow, accuracy_metrics, probabilistic_metrics,
)
from src.components.model_trainer import ModelTrainer, ModelTrainerConfig, TrainConfig
from src.config_schema import METHODS, POINT_METHODS
from src.exception import ConfigurationError, CustomException
from src.logger import logging
from src.models.forecaster import BACKBONES, ForecastModel, model_from_meta
from src.models.heads import HeadSpec
from src.models.losses import CombinedLossWeights
from src.models.lstm import LstmSpec
from src.models.patchformer import Frequency, PatchformerSpec, choose_patch_size, select_patch_sizes
from src.pipeline.predict_pipeline import (
    PredictionPipeline, frame_to_records, records_to_frame,
)
from src.pipeline.report_pipeline import emit_report
from src.utils import load_json, save_json

STAGES = ("train", "evaluate", "backtest")


@dataclass
class ExperimentConfig:
    # data
    data_path: Optional[str] = None
    synthetic_symbols: int = 11
    synthetic_days: int = 1500
    cutoff_date: str = "2024-01-01"
    symbols: List[str] = field(default_factory=list)
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    output_dir: str = os.path.join("runs", "default")
    report_formats: List[str] = field(default_factory=lambda: ["csv", "json"])
    # preprocessing
    lookback_window: int = 50
    validation_fraction: float = 0.2
    outlier_lower_percentile: float = 1.0
    outlier_upper_percentile: float = 99.0
    target_scale: float = 100.0
    # model
    backbone: str = "lstm"
    frequency: str = "daily"
    hidden_dimensions: int = 32
    dropout_rate: float = 0.1
    d_model: int = 16
    attention_heads: int = 2
    transformer_layers: int = 1
    ffn_hidden: int = 32
    # location heads squashed to ±bound_scale standardized units (×target_scale on the model scale)
    bounded_methods: List[str] = field(default_factory=lambda: ["evidential"])
    bound_scale: float = 3.0
    quantile_levels: List[float] = field(default_factory=lambda: [0.025, 0.5, 0.975])
    mixture_components: int = 3
    huber_delta: float = 1.0
    # training
    learning_rate: float = 0.001
    batch_size: int = 128
    maximum_epochs: int = 50
    early_stopping_patience: int = 10
    gradient_clipping_max_norm: float = 1.0
    weight_decay: float = 0.001
    warmup_fraction: float = 0.1
    anneal_fraction: float = 0.15
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    random_seed: int = 0
    regularization_weight: float = 0.1
    coverage_weight: float = 0.0
    l2_weight: float = 0.001
    target_picp: float = 0.95
    # evaluation
    interval_level: float = 0.95
    uncertainty_threshold_percentile: float = 75.0
    conformal_alpha: float = 0.05
    conformal_gamma: float = 0.01
    conformal_adaptive: bool = True
    crps_mode: str = "gaussian"
    n_jobs: int = 1

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {unknown}")
        cfg = cls(**payload)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        try:
            payload = load_json(path)
        except CustomException as e:
            raise ConfigurationError(f"cannot read config {path}: {e}")
        if not isinstance(payload, dict):
            raise ConfigurationError(f"{path} must hold a JSON object")
        return cls.from_dict(payload)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigurationError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if not set(self.bounded_methods) <= set(METHODS):
            raise ConfigurationError(f"bounded_methods must be a subset of {METHODS}, got {self.bounded_methods}")
        if self.target_scale <= 0:
            raise ConfigurationError("target_scale must be positive")
        if self.backbone not in BACKBONES:
            raise ConfigurationError(f"backbone must be one of {BACKBONES}")
        if self.frequency not in {f.value for f in Frequency}:
            raise ConfigurationError(f"unknown frequency '{self.frequency}'")
        if self.data_path and not os.path.exists(self.data_path):
            raise ConfigurationError(f"data file not found: {self.data_path}")
        if self.crps_mode not in ("gaussian", "student_t_sampled"):
            raise ConfigurationError("crps_mode must be 'gaussian' or 'student_t_sampled'")
        if not set(self.report_formats) <= {"csv", "json"}:
            raise ConfigurationError("report_formats must be a subset of ['csv', 'json']")
        if not 0.0 <= self.uncertainty_threshold_percentile <= 100.0:
            raise ConfigurationError("uncertainty_threshold_percentile must lie in [0, 100]")
        try:
            np.datetime64(self.cutoff_date, "D")
        except ValueError:
            raise ConfigurationError(f"cutoff_date '{self.cutoff_date}' is not an ISO date")
        try:
            self.train_config()
            for method in self.methods:
                self.model_for(method)
        except ValueError as e:
            raise ConfigurationError(str(e))
        return self

    def path(self, *parts) -> str:
        return os.path.join(self.output_dir, *parts)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.maximum_epochs,
            patience=self.early_stopping_patience,
            clip_max_norm=self.gradient_clipping_max_norm,
            weight_decay=self.weight_decay,
            warmup_fraction=self.warmup_fraction,
            anneal_fraction=self.anneal_fraction,
            betas=(self.adam_beta1, self.adam_beta2),
            epsilon=self.adam_epsilon,
            seed=self.random_seed,
            loss_weights=CombinedLossWeights(
                lambda_evd=self.regularization_weight,
                lambda_coverage=self.coverage_weight,
                lambda_wd=self.l2_weight,
                target_picp=self.target_picp,
            ),
        )

    def model_for(self, method: str) -> ForecastModel:
        head = HeadSpec(
            method=method,
            quantile_levels=tuple(self.quantile_levels),
            n_components=self.mixture_components,
            bounded_mean=method in self.bounded_methods,
            bound_scale=self.bound_scale * self.target_scale,
        )
        pf = None
        if self.backbone == "patchformer":
            pf = PatchformerSpec(
                d_model=self.d_model,
                n_heads=self.attention_heads,
                n_layers=self.transformer_layers,
                ffn_hidden=self.ffn_hidden,
                patch_size=choose_patch_size(select_patch_sizes(self.frequency), self.lookback_window),
                lookback=self.lookback_window,
                dropout_rate=self.dropout_rate,
            )
        return ForecastModel(
            head=head,
            backbone=self.backbone,
            lstm_spec=LstmSpec(hidden_dim=self.hidden_dimensions, dropout_rate=self.dropout_rate,
                               lookback=self.lookback_window),
            patchformer_spec=pf,
            huber_delta=self.huber_delta,
        )

    def conformal_config(self) -> ConformalConfig:
        return ConformalConfig(alpha=self.conformal_alpha, gamma=self.conformal_gamma,
                               adaptive=self.conformal_adaptive)


@dataclass
class CellResult:
    symbol: str
    method: str
    status: str = "ok"
    stage: Optional[str] = None
    error: Optional[str] = None
    wall_time_s: float = 0.0
    row: Optional[MetricsRow] = None

    def manifest_entry(self) -> dict:
        return {
            "symbol": self.symbol, "method": self.method, "status": self.status,
            "stage": self.stage, "error": self.error, "wall_time_s": round(self.wall_time_s, 3),
        }


@dataclass
class ExperimentResult:
    report: MetricsReport
    cells: List[CellResult]
    preprocessing_failures: Dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> List[CellResult]:
        return [c for c in self.cells if c.status != "ok"]

    @property
    def exit_code(self) -> int:
        return 2 if self.failed or self.preprocessing_failures else 0


def _ingestion(cfg: ExperimentConfig) -> DataIngestion:
    return DataIngestion(DataIngestionConfig(
        raw_data_path=cfg.path("data", "prices.csv"),
        source_path=cfg.data_path,
        n_symbols=cfg.synthetic_symbols,
        n_days=cfg.synthetic_days,
        cutoff_date=cfg.cutoff_date,
        seed=cfg.random_seed,
        symbols=list(cfg.symbols),
    ))


def ingest(cfg: ExperimentConfig):
    """Stage 1: working copy of the price data under <out>/data/prices.csv."""
    return _ingestion(cfg).initiate_data_ingestion()


def prepare(cfg: ExperimentConfig) -> Tuple[Dict[str, SymbolData], Dict[str, str]]:
    """Stage 2: returns, splits, normalization and windows for every symbol."""
    series = _ingestion(cfg).cached_series()
    if series is None:
        series, _ = ingest(cfg)
    transformation = DataTransformation(DataTransformationConfig(
        preprocessor_obj_file_path=cfg.path("artifacts", "preprocessing.pkl"),
        cutoff_date=cfg.cutoff_date,
        val_fraction=cfg.validation_fraction,
        lookback=cfg.lookback_window,
        lower_percentile=cfg.outlier_lower_percentile,
        upper_percentile=cfg.outlier_upper_percentile,
        target_scale=cfg.target_scale,
    ))
    prepared = transformation.initiate_data_transformation(series)
    failures = {s: str(e) for s, e in transformation.failures.items()}
    return prepared, failures


def predictions_path(cfg: ExperimentConfig, symbol: str, method: str) -> str:
    return cfg.path("predictions", f"{symbol}__{method}.csv")


def trades_path(cfg: ExperimentConfig, symbol: str, method: str) -> str:
    return cfg.path("trades", f"{symbol}__{method}.csv")


def _write_csv(frame: pd.DataFrame, path: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    frame.to_csv(path, index=False, na_rep="NA")


def _load_cell_model(cfg: ExperimentConfig, symbol: str, method: str):
    trainer = ModelTrainer(ModelTrainerConfig(artifacts_dir=cfg.path("artifacts")))
    params, meta, _ = trainer.load_cell(symbol, method)
    return model_from_meta(meta), params


def score_predictions(cfg: ExperimentConfig, frame: pd.DataFrame, symbol: str, method: str,
                      sampled_crps: Optional[float] = None):
    """Accuracy, probabilistic (NA for point methods) and trading metrics of one cell."""
    mean = frame["mean"].to_numpy(dtype=np.float64)
    actual = frame["actual_return"].to_numpy(dtype=np.float64)
    probabilistic = method not in POINT_METHODS
    row_kwargs = {"accuracy": accuracy_metrics(mean, actual)}
    std = None
    if probabilistic:
        std = frame["std"].to_numpy(dtype=np.float64)
        row_kwargs["probabilistic"] = probabilistic_metrics(
            mean, std, frame["lower"].to_numpy(dtype=np.float64), frame["upper"].to_numpy(dtype=np.float64),
            actual,
            crps_values=None if sampled_crps is None else [sampled_crps],
            with_crps=method != "quantile",
        )
    bt = run_backtest(symbol, mean, actual, uncertainties=std,
                      pct=cfg.uncertainty_threshold_percentile,
                      indices=frame["index"].to_numpy(dtype=np.int64))
    row = MetricsRow(symbol=symbol, method=method, trading=bt.unfiltered, filtered=bt.filtered,
                     filtered_all_days=bt.filtered_all_days, **row_kwargs)
    return row, bt


def run_cell(cfg: ExperimentConfig, data: SymbolData, method: str,
             stages: Sequence[str] = STAGES) -> CellResult:
    """Train, predict and score one (symbol, method) cell; failures are captured, not raised."""
    result = CellResult(symbol=data.symbol, method=method)
    start = time.perf_counter()
    model = params = None
    frame = None
    try:
        if "train" in stages:
            result.stage = "train"
            model = cfg.model_for(method)
            trainer = ModelTrainer(ModelTrainerConfig(artifacts_dir=cfg.path("artifacts")))
            params, _ = trainer.initiate_model_trainer(model, data.symbol, data.train, data.val, cfg.train_config())

        if "evaluate" in stages:
            result.stage = "evaluate"
            if model is None:
                model, params = _load_cell_model(cfg, data.symbol, method)
            pipeline = PredictionPipeline(model, params, cfg.interval_level, cfg.conformal_config(),
                                          cfg.crps_mode, seed=cfg.random_seed)
            calibration = pipeline.calibration_from(data.val) if method == "conformal_base" else None
            frame = records_to_frame(pipeline.predict(data.test, data.stats, calibration))
            _write_csv(frame, predictions_path(cfg, data.symbol, method))

        if "backtest" in stages:
            result.stage = "backtest"
            if frame is None:
                frame = pd.read_csv(predictions_path(cfg, data.symbol, method), na_values=["NA"],
                                    keep_default_na=False)
                frame = records_to_frame(frame_to_records(frame))
            sampled = None
            if method == "evidential" and cfg.crps_mode == "student_t_sampled":
                if model is None:
                    model, params = _load_cell_model(cfg, data.symbol, method)
                pipeline = PredictionPipeline(model, params, cfg.interval_level, crps_mode=cfg.crps_mode,
                                              seed=cfg.random_seed)
                sampled = pipeline.sampled_crps(data.test, data.stats)
            result.row, bt = score_predictions(cfg, frame, data.symbol, method, sampled)
            _write_csv(bt.trade_log(), trades_path(cfg, data.symbol, method))

        result.stage = None
    except Exception as e:
        result.status = "failed"
        result.error = f"{type(e).__name__}: {e}"
        logging.error("Cell %s/%s failed at stage %s: %s", data.symbol, method, result.stage, e)
    result.wall_time_s = time.perf_counter() - start
    return result


def resolve_n_jobs(cfg: ExperimentConfig) -> int:
    override = os.environ.get("PROBFM_N_JOBS")
    if override:
        try:
            return int(override)
        except ValueError:
            raise ConfigurationError(f"PROBFM_N_JOBS must be an integer, got '{override}'")
    return cfg.n_jobs


def run_cells(cfg: ExperimentConfig, prepared: Dict[str, SymbolData],
              stages: Sequence[str] = STAGES) -> List[CellResult]:
    """Every (symbol, method) cell in a joblib pool; results come back in a fixed order."""
    jobs = [(prepared[s], m) for s in sorted(prepared) for m in cfg.methods]
    n_jobs = resolve_n_jobs(cfg)
    logging.info("Running %d cells (%s) with n_jobs=%d", len(jobs), ",".join(stages), n_jobs)
    if n_jobs == 1:
        return [run_cell(cfg, data, method, stages) for data, method in jobs]
    return Parallel(n_jobs=n_jobs)(delayed(run_cell)(cfg, data, method, stages) for data, method in jobs)


def write_manifest(cfg: ExperimentConfig, cells: List[CellResult], preprocessing_failures: Dict[str, str],
                   command: str) -> str:
    path = cfg.path("run_manifest.json")
    save_json(path, {
        "command": command,
        "config": cfg.to_dict(),
        "cells": [c.manifest_entry() for c in cells],
        "preprocessing_failures": preprocessing_failures,
        "n_failed": sum(c.status != "ok" for c in cells) + len(preprocessing_failures),
    })
    return path


def collect_report(cells: List[CellResult]) -> MetricsReport:
    return MetricsReport(rows=[c.row for c in cells if c.row is not None])


def run_experiment(cfg: ExperimentConfig, stages: Sequence[str] = STAGES,
                   command: str = "run-all") -> ExperimentResult:
    """
    Full pipeline for every symbol and method. A failing cell is recorded in
    the run manifest and never stops the others.
    """
    try:
        logging.info("Experiment started: %s -> %s", command, cfg.output_dir)
        os.makedirs(cfg.output_dir, exist_ok=True)
        prepared, failures = prepare(cfg)
        cells = run_cells(cfg, prepared, stages)
        report = collect_report(cells)
        if "backtest" in stages:
            if report.rows:
                # metrics.json is what the `report` stage reads back
                emit_report(report, cfg.path("reports"), sorted(set(cfg.report_formats) | {"json"}))
            else:
                logging.warning("No cell produced metrics; reports not written")
        write_manifest(cfg, cells, failures, command)
        result = ExperimentResult(report=report, cells=cells, preprocessing_failures=failures)
        logging.info("Experiment finished: %d cells, %d failed", len(cells), len(result.failed))
        return result

    except (CustomException, ConfigurationError):
        raise
    except Exception as e:
        raise CustomException(e, sys)
