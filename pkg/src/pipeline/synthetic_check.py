"""
Direct-feature evidential fit on the heteroscedastic cubic set.

The trained head should separate the two uncertainty sources: its aleatoric
variance follows the true noise variance σ²(x), and its epistemic variance
grows once x leaves the training range.
"""
import sys
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.components.data_ingestion import SyntheticRegression, gen_synthetic
from src.components.data_transformation import SequenceDataset
from src.components.model_trainer import TrainConfig, TrainHistory, train
from src.exception import ContractError, CustomException
from src.logger import logging
from src.models.evidential import decompose
from src.models.forecaster import ForecastModel
from src.models.heads import HeadSpec
from src.models.losses import CombinedLossWeights
from src.models.lstm import LstmSpec
from src.utils import pearson_or_nan

# training inputs are drawn from [-TRAIN_RANGE, TRAIN_RANGE]
TRAIN_RANGE = 4.0


@dataclass(frozen=True)
class DecompositionCheckConfig:
    n: int = 2000
    seed: int = 0
    hidden_dim: int = 32
    learning_rate: float = 0.005
    batch_size: int = 128
    max_epochs: int = 300
    patience: int = 30
    regularization_weight: float = 0.01
    val_fraction: float = 0.2
    n_bins: int = 20
    min_aleatoric_corr: float = 0.8
    min_epistemic_ratio: float = 2.0

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            weight_decay=1e-4,
            seed=self.seed,
            loss_weights=CombinedLossWeights(lambda_evd=self.regularization_weight, lambda_wd=0.0),
        )

    def model(self) -> ForecastModel:
        # a one-step recurrence reads the feature directly
        return ForecastModel(
            head=HeadSpec("evidential"),
            lstm_spec=LstmSpec(hidden_dim=self.hidden_dim, dropout_rate=0.0, lookback=1),
        )


@dataclass(frozen=True)
class DecompositionCheck:
    aleatoric_corr: float
    in_range_epistemic: float
    out_of_range_epistemic: float
    history: TrainHistory
    min_aleatoric_corr: float = 0.8
    min_epistemic_ratio: float = 2.0

    @property
    def epistemic_ratio(self) -> float:
        return self.out_of_range_epistemic / self.in_range_epistemic

    @property
    def passed(self) -> bool:
        return (self.aleatoric_corr > self.min_aleatoric_corr
                and self.epistemic_ratio >= self.min_epistemic_ratio)

    def summary(self) -> dict:
        return {
            "aleatoric_corr": self.aleatoric_corr,
            "epistemic_ratio": self.epistemic_ratio,
            "in_range_epistemic": self.in_range_epistemic,
            "out_of_range_epistemic": self.out_of_range_epistemic,
            "best_epoch": self.history.best_epoch,
            "passed": self.passed,
        }


def _dataset(x_feature, y_model, y, split: str) -> SequenceDataset:
    n = np.size(y)
    return SequenceDataset(
        symbol="CUBIC", split=split,
        windows=np.asarray(x_feature, dtype=np.float64)[:, None],
        targets=np.asarray(y_model, dtype=np.float64),
        actual_returns=np.asarray(y, dtype=np.float64),
        dates=np.full(n, np.datetime64("NaT"), dtype="datetime64[D]"),
        positions=np.arange(n),
    )


def cubic_datasets(data: SyntheticRegression, val_fraction: float = 0.2
                   ) -> Tuple[SequenceDataset, SequenceDataset, float, float]:
    """Standardized train/validation sets from the training draw; returns (train, val, x_std, y_std)."""
    if not 0.0 < val_fraction < 1.0:
        raise ContractError("val_fraction must lie in (0, 1)")
    x_std = float(np.std(data.x_train))
    y_std = float(np.std(data.y_train))
    n_val = int(round(val_fraction * data.x_train.size))
    cut = data.x_train.size - n_val
    xs, ys = data.x_train / x_std, data.y_train / y_std
    train_set = _dataset(xs[:cut], ys[:cut], data.y_train[:cut], "train")
    val_set = _dataset(xs[cut:], ys[cut:], data.y_train[cut:], "val")
    return train_set, val_set, x_std, y_std


def binned_correlation(x, predicted, truth, n_bins: int, lo: float, hi: float) -> float:
    """Pearson correlation of per-bin means over ``n_bins`` equal-width bins of x in [lo, hi]."""
    x = np.asarray(x, dtype=np.float64)
    edges = np.linspace(lo, hi, n_bins + 1)
    which = np.digitize(x, edges[1:-1])
    inside = (x >= lo) & (x <= hi)
    pred_means, true_means = [], []
    for b in range(n_bins):
        mask = inside & (which == b)
        if np.any(mask):
            pred_means.append(float(np.mean(np.asarray(predicted)[mask])))
            true_means.append(float(np.mean(np.asarray(truth)[mask])))
    return pearson_or_nan(pred_means, true_means)


def run_decomposition_check(cfg: DecompositionCheckConfig = DecompositionCheckConfig()) -> DecompositionCheck:
    try:
        data = gen_synthetic("heteroscedastic_cubic", cfg.n, cfg.seed)
        train_set, val_set, x_std, y_std = cubic_datasets(data, cfg.val_fraction)
        model = cfg.model()
        params, history = train(model, train_set, val_set, cfg.train_config())

        raw = model.predict_raw(params, (data.x_test / x_std)[:, None])
        parts = decompose(model.nig(raw))
        aleatoric = parts.aleatoric * y_std ** 2
        epistemic = parts.epistemic * y_std ** 2

        in_range = np.abs(data.x_test) <= TRAIN_RANGE
        if in_range.all() or not in_range.any():
            raise ContractError("test inputs must cover both sides of the training range")
        check = DecompositionCheck(
            aleatoric_corr=binned_correlation(data.x_test, aleatoric, data.sigma_test ** 2,
                                              cfg.n_bins, -TRAIN_RANGE, TRAIN_RANGE),
            in_range_epistemic=float(np.mean(epistemic[in_range])),
            out_of_range_epistemic=float(np.mean(epistemic[~in_range])),
            history=history,
            min_aleatoric_corr=cfg.min_aleatoric_corr,
            min_epistemic_ratio=cfg.min_epistemic_ratio,
        )
        logging.info("Decomposition check: %s", check.summary())
        return check

    except CustomException:
        raise
    except Exception as e:
        raise CustomException(e, sys)
