from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Tuple

import numpy as np

from src.diffkit.graph import LossFn, evaluate, value_and_grad
from src.exception import ContractError, NumericOverflowError
from src.logger import logging


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradReport:
    analytic: Dict[str, np.ndarray]
    numeric: Dict[str, np.ndarray]
    max_rel_error: float
    max_abs_error: float
    # (parameter, flat index) pairs whose perturbed loss was non-finite
    flagged: List[Tuple[str, int]] = field(default_factory=list)

    def within(self, rtol: float = 1e-4, atol: float = 0.0) -> bool:
        """True when every checked coordinate meets rtol, or atol in absolute terms."""
        for name, a in self.analytic.items():
            f = self.numeric[name]
            ok = (relative_error(a, f) < rtol) | (np.abs(a - f) <= atol)
            ok |= np.isnan(f)
            if not np.all(ok):
                return False
        return True


def finite_diff_check(loss_fn: LossFn, parameter_values: Mapping[str, np.ndarray], step: float = 1e-5) -> GradReport:
    """
    Compare reverse-mode gradients with central differences
    (f(θ+h) − f(θ−h)) / 2h, one coordinate at a time.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ContractError(f"finite-difference step {step} outside [1e-7, 1e-3]")

    base = {k: np.array(v, dtype=np.float64) for k, v in parameter_values.items()}
    _, analytic = value_and_grad(loss_fn, base)

    numeric: Dict[str, np.ndarray] = {}
    flagged: List[Tuple[str, int]] = []
    for name, value in base.items():
        fd = np.full(value.size, np.nan)
        for i in range(value.size):
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            plus[name].flat[i] += step
            minus[name].flat[i] -= step
            try:
                f_plus = evaluate(loss_fn, plus)
                f_minus = evaluate(loss_fn, minus)
            except NumericOverflowError:
                flagged.append((name, i))
                continue
            fd[i] = (f_plus - f_minus) / (2.0 * step)
        numeric[name] = fd.reshape(value.shape)

    rel, absolute = [0.0], [0.0]
    for name, a in analytic.items():
        f = numeric[name]
        mask = ~np.isnan(f)
        if np.any(mask):
            rel.append(float(relative_error(a[mask], f[mask]).max()))
            absolute.append(float(np.abs(a[mask] - f[mask]).max()))
    if flagged:
        logging.warning("finite-difference check: %d coordinates non-finite when perturbed", len(flagged))

    return GradReport(
        analytic=analytic,
        numeric=numeric,
        max_rel_error=max(rel),
        max_abs_error=max(absolute),
        flagged=flagged,
    )
