import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.components.data_transformation import SequenceDataset
from src.components.optimizer import (
    OptimState, adamw_step, clip_gradients, evidence_scale, fraction_to_steps, lr_at,
)
from src.diffkit import value_and_grad
from src.exception import (
    ContractError, CustomException, DegenerateParameterError, NumericOverflowError,
    TrainingDivergedError,
)
from src.logger import logging
from src.models.forecaster import ForecastModel, model_to_meta
from src.models.losses import CombinedLossWeights
from src.utils import load_checkpoint, load_json, save_checkpoint, save_json

Params = Dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 10
    clip_max_norm: float = 1.0
    weight_decay: float = 0.001
    warmup_fraction: float = 0.1
    anneal_fraction: float = 0.15
    betas: Tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    seed: int = 0
    loss_weights: CombinedLossWeights = field(default_factory=CombinedLossWeights)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.clip_max_norm <= 0 or self.epsilon <= 0:
            raise ContractError("learning_rate, clip_max_norm and epsilon must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ContractError("batch_size, max_epochs and patience must be >= 1")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be >= 0")
        for name in ("warmup_fraction", "anneal_fraction"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ContractError(f"{name} must lie in (0, 1]")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ContractError("betas must lie in [0, 1)")


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)
    evidence_scale: List[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainHistory":
        nan = float("nan")
        as_floats = lambda xs: [nan if x is None else float(x) for x in xs]
        return cls(
            train_loss=as_floats(payload.get("train_loss", [])),
            val_loss=as_floats(payload.get("val_loss", [])),
            learning_rate=as_floats(payload.get("learning_rate", [])),
            evidence_scale=as_floats(payload.get("evidence_scale", [])),
            best_epoch=int(payload.get("best_epoch", -1)),
            stopped_early=bool(payload.get("stopped_early", False)),
        )


def dropout_seed_for(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def train(model: ForecastModel, train_set: SequenceDataset, val_set: SequenceDataset,
          cfg: TrainConfig = TrainConfig(), initial_params: Optional[Params] = None) -> Tuple[Params, TrainHistory]:
    """
    Mini-batch AdamW with clipping, warmup-cosine LR and evidence annealing;
    keeps the parameters of the epoch with the lowest validation loss and
    stops after ``patience`` epochs without strict improvement.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ContractError("training needs non-empty train and validation splits")

    params = {k: np.array(v, dtype=np.float64) for k, v in (initial_params or model.init_params(cfg.seed)).items()}
    state = OptimState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)

    n = len(train_set)
    n_batches = math.ceil(n / cfg.batch_size)
    total_steps = cfg.max_epochs * n_batches
    warmup_steps = fraction_to_steps(cfg.warmup_fraction, total_steps)
    anneal_steps = fraction_to_steps(cfg.anneal_fraction, total_steps)
    weights = cfg.loss_weights
    # decoupled AdamW decay replaces the loss-side penalty when it is active
    weight_penalty = cfg.weight_decay == 0.0

    history = TrainHistory()
    best_params = {k: v.copy() for k, v in params.items()}
    best_val = math.inf
    waited = 0
    step = 0
    lr = 0.0
    scale = 0.0

    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        batch_losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            xb, yb = train_set.windows[idx], train_set.targets[idx]
            t = step + 1
            lr = lr_at(t, cfg.learning_rate, total_steps, warmup_steps)
            scale = evidence_scale(t, anneal_steps)
            seed = dropout_seed_for(cfg.seed, step)

            try:
                loss, grads = value_and_grad(
                    lambda p: model.loss(p, xb, yb, training=True, dropout_seed=seed,
                                         evidence_scale=scale, weights=weights,
                                         weight_penalty=weight_penalty),
                    params,
                )
            except NumericOverflowError as e:
                terms = model.loss_terms(params, xb, yb, weights, scale)
                terms.update(node=e.node, serial=e.serial, position=e.position, step=step)
                raise TrainingDivergedError(epoch, b, terms)
            except DegenerateParameterError as e:
                terms = model.loss_terms(params, xb, yb, weights, scale)
                terms.update(error=str(e.args[0]), step=step)
                raise TrainingDivergedError(epoch, b, terms)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, b, model.loss_terms(params, xb, yb, weights, scale))

            grads = clip_gradients(grads, cfg.clip_max_norm)
            params, state = adamw_step(state, params, grads, lr, cfg.betas, cfg.epsilon, cfg.weight_decay)
            batch_losses.append(loss)
            step += 1

        try:
            val_loss = model.evaluate_loss(params, val_set.windows, val_set.targets, weights)
        except NumericOverflowError as e:
            logging.warning("Validation loss overflowed at epoch %d (%s)", epoch, e)
            val_loss = math.inf
        except DegenerateParameterError as e:
            raise TrainingDivergedError(epoch, n_batches - 1, {
                "stage": "validation", "step": step, "error": str(e.args[0]),
            })

        history.train_loss.append(float(np.mean(batch_losses)))
        history.val_loss.append(float(val_loss))
        history.learning_rate.append(lr)
        history.evidence_scale.append(scale)
        logging.info(
            "[%s] epoch %d: train %.6f val %.6f lr %.3g s %.3f",
            model.method, epoch, history.train_loss[-1], val_loss, lr, scale,
        )

        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            history.best_epoch = epoch
            waited = 0
        else:
            waited += 1
            if waited >= cfg.patience:
                history.stopped_early = True
                logging.info("Early stopping after %d epochs (best epoch %d)", epoch + 1, history.best_epoch)
                break

    if history.best_epoch < 0:
        raise TrainingDivergedError(history.epochs_run - 1, n_batches - 1, {"val_loss": "never finite"})
    return best_params, history


@dataclass
class ModelTrainerConfig:
    artifacts_dir: str = "artifacts"

    def cell_dir(self, symbol: str, method: str) -> str:
        return os.path.join(self.artifacts_dir, symbol, method)


class ModelTrainer:
    def __init__(self, config: Optional[ModelTrainerConfig] = None):
        self.config = config or ModelTrainerConfig()

    def initiate_model_trainer(self, model: ForecastModel, symbol: str, train_set: SequenceDataset,
                               val_set: SequenceDataset, train_config: TrainConfig) -> Tuple[Params, TrainHistory]:
        """Train one (symbol, method) cell and write checkpoint.json and history.json."""
        try:
            logging.info("Training %s on %s (%d train / %d val windows)",
                         model.method, symbol, len(train_set), len(val_set))
            params, history = train(model, train_set, val_set, train_config)

            cell_dir = self.config.cell_dir(symbol, model.method)
            meta = model_to_meta(model)
            meta.update(symbol=symbol, method=model.method, best_epoch=history.best_epoch,
                        seed=train_config.seed)
            save_checkpoint(os.path.join(cell_dir, "checkpoint.json"), params, meta)
            save_json(os.path.join(cell_dir, "history.json"), history.to_dict())
            logging.info("%s/%s best epoch %d, checkpoint saved to %s",
                         symbol, model.method, history.best_epoch, cell_dir)
            return params, history

        except CustomException:
            raise
        except Exception as e:
            raise CustomException(e, sys)

    def load_cell(self, symbol: str, method: str):
        """(params, meta, history) of a previously trained cell."""
        cell_dir = self.config.cell_dir(symbol, method)
        params, meta = load_checkpoint(os.path.join(cell_dir, "checkpoint.json"))
        history = TrainHistory.from_dict(load_json(os.path.join(cell_dir, "history.json")))
        return params, meta, history
