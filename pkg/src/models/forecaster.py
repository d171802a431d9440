"""
A backbone (LSTM or patch transformer) composed with an output head, plus the
per-method training objective. Parameters live outside the model in a flat
``{name: ndarray}`` dict so the trainer, optimizer and checkpoint writer all
share one representation.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from src.diffkit import Tensor, as_tensor, evaluate, mean
from src.exception import ContractError
from src.models import lstm, patchformer
from src.models.evidential import NIGParams, constrain_nig
from src.models.heads import HeadSpec, head_forward
from src.models.losses import CombinedLossWeights, baseline_loss, combined_loss

BACKBONES = ("lstm", "patchformer")


@dataclass(frozen=True)
class ForecastModel:
    head: HeadSpec
    backbone: str = "lstm"
    lstm_spec: lstm.LstmSpec = field(default_factory=lstm.LstmSpec)
    patchformer_spec: Optional[patchformer.PatchformerSpec] = None
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ContractError(f"unknown backbone '{self.backbone}', expected one of {BACKBONES}")
        if self.backbone == "patchformer" and self.patchformer_spec is None:
            raise ContractError("patchformer backbone needs a PatchformerSpec")

    @property
    def method(self) -> str:
        return self.head.method

    @property
    def lookback(self) -> int:
        if self.backbone == "patchformer":
            return self.patchformer_spec.lookback
        return self.lstm_spec.lookback

    def init_params(self, seed: int) -> Dict[str, np.ndarray]:
        if self.backbone == "patchformer":
            return patchformer.init_params(self.patchformer_spec, self.head, seed)
        return lstm.init_params(self.lstm_spec, self.head, seed)

    def forward(self, params: Mapping[str, Tensor], windows, training: bool = False,
                dropout_seed: int = 0) -> Tensor:
        """Raw head outputs, shape (B, head.output_dim)."""
        if self.backbone == "patchformer":
            hidden = patchformer.patchformer_forward(params, windows, self.patchformer_spec, training, dropout_seed)
        else:
            hidden = lstm.lstm_forward(params, windows, self.lstm_spec, training, dropout_seed)
        return head_forward(params, hidden, self.head)

    def nig(self, raw) -> NIGParams:
        return constrain_nig(raw, self.head.bounded_mean, self.head.bound_scale)

    def loss(self, params: Mapping[str, Tensor], windows, targets, *, training: bool = False,
             dropout_seed: int = 0, evidence_scale: float = 1.0,
             weights: CombinedLossWeights = CombinedLossWeights(),
             weight_penalty: bool = False) -> Tensor:
        """
        Scalar batch objective for this model's method. ``weight_penalty`` adds
        the λ_wd·‖θ‖² term to the evidential objective; the trainer enables it
        only when the optimizer applies no decoupled decay.
        """
        raw = self.forward(params, windows, training, dropout_seed)
        y = as_tensor(np.asarray(targets, dtype=np.float64))
        if self.method == "evidential":
            decayed = [params[name] for name in decay_names(params)] if weight_penalty else ()
            return combined_loss(self.nig(raw), y, weights, evidence_scale, decayed,
                                 hard_coverage=not training)
        per_sample = baseline_loss(
            self.method, raw, y,
            quantile_levels=self.head.quantile_levels,
            n_components=self.head.n_components,
            huber_delta=self.huber_delta,
            bounded_mean=self.head.bounded_mean,
            bound_scale=self.head.bound_scale,
        )
        return mean(per_sample)

    def loss_terms(self, params: Mapping[str, np.ndarray], windows, targets,
                   weights: CombinedLossWeights, evidence_scale: float) -> Dict[str, float]:
        """Separate objective components, logged when training diverges."""
        terms = {}
        try:
            raw = self.forward(params, windows).data
            terms["raw_abs_max"] = float(np.max(np.abs(raw))) if raw.size else 0.0
            if self.method == "evidential":
                v = self.nig(raw).values()
                terms.update(
                    alpha_min=float(np.min(v.alpha)),
                    lam_min=float(np.min(v.lam)),
                    beta_min=float(np.min(v.beta)),
                    evidence_scale=float(evidence_scale),
                    lambda_evd=weights.lambda_evd,
                )
        except Exception as e:
            terms["forward_error"] = str(e)
        return terms

    def predict_raw(self, params: Mapping[str, np.ndarray], windows, batch_size: int = 512) -> np.ndarray:
        """Inference-mode raw outputs for any number of windows, computed in chunks."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.shape[0] == 0:
            return np.zeros((0, self.head.output_dim))
        chunks = []
        for start in range(0, windows.shape[0], batch_size):
            chunks.append(self.forward(params, windows[start:start + batch_size]).data)
        return np.concatenate(chunks, axis=0)

    def evaluate_loss(self, params: Mapping[str, np.ndarray], windows, targets,
                      weights: CombinedLossWeights = CombinedLossWeights()) -> float:
        """No-dropout, penalty-free loss with evidence_scale 1 (model-selection criterion)."""
        return evaluate(
            lambda p: self.loss(p, windows, targets, training=False, weights=weights),
            params,
        )


def decay_names(params: Mapping[str, object]):
    """Matrix-valued parameters: the ones the ‖θ‖² penalty applies to."""
    return [name for name, value in params.items() if np.ndim(getattr(value, "data", value)) == 2]


def model_to_meta(model: ForecastModel) -> dict:
    """JSON-ready description of ``model`` stored alongside its checkpoint."""
    return {
        "backbone": model.backbone,
        "huber_delta": model.huber_delta,
        "head": asdict(model.head),
        "lstm_spec": asdict(model.lstm_spec),
        "patchformer_spec": asdict(model.patchformer_spec) if model.patchformer_spec else None,
    }


def model_from_meta(meta: Mapping) -> ForecastModel:
    try:
        head = dict(meta["head"])
        head["quantile_levels"] = tuple(head.get("quantile_levels", (0.025, 0.5, 0.975)))
        pf = meta.get("patchformer_spec")
        return ForecastModel(
            head=HeadSpec(**head),
            backbone=meta.get("backbone", "lstm"),
            lstm_spec=lstm.LstmSpec(**meta.get("lstm_spec", {})),
            patchformer_spec=patchformer.PatchformerSpec(**pf) if pf else None,
            huber_delta=float(meta.get("huber_delta", 1.0)),
        )
    except (KeyError, TypeError) as e:
        raise ContractError(f"checkpoint metadata does not describe a model: {e}")
