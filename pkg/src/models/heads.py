from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from src.config_schema import METHODS
from src.diffkit import Tensor, as_tensor, matmul
from src.exception import ContractError
from src.models.losses import head_width


@dataclass(frozen=True)
class HeadSpec:
    method: str
    quantile_levels: Tuple[float, ...] = (0.025, 0.5, 0.975)
    n_components: int = 3
    bounded_mean: bool = False
    bound_scale: float = 3.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method '{self.method}', expected one of {METHODS}")
        if self.method == "quantile":
            levels = np.asarray(self.quantile_levels)
            if levels.size == 0 or np.any((levels <= 0) | (levels >= 1)) or np.any(np.diff(levels) <= 0):
                raise ContractError("quantile_levels must be strictly increasing in (0, 1)")
        if self.n_components < 1:
            raise ContractError("n_components must be >= 1")
        if self.bound_scale <= 0:
            raise ContractError("bound_scale must be positive")

    @property
    def output_dim(self) -> int:
        return head_width(self.method, len(self.quantile_levels), self.n_components)


def init_head_params(in_dim: int, head: HeadSpec, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(in_dim)
    return {
        "head.weight": rng.uniform(-bound, bound, size=(in_dim, head.output_dim)),
        "head.bias": np.zeros(head.output_dim),
    }


def head_forward(params: Mapping[str, Tensor], hidden, head: HeadSpec) -> Tensor:
    """Affine map to the raw, unconstrained outputs of ``head``."""
    weight = as_tensor(params["head.weight"])
    if weight.shape[1] != head.output_dim:
        raise ContractError(f"head weight width {weight.shape[1]} != {head.output_dim} for {head.method}")
    return matmul(as_tensor(hidden), weight) + params["head.bias"]
