import json
import math
import os
import pickle
import sys
from typing import Any, Dict, Mapping, Optional

import joblib
import numpy as np

from src.exception import ContractError, CustomException

CHECKPOINT_FORMAT = "probfm-checkpoint"
CHECKPOINT_VERSION = 1


def save_object(file_path, obj):
    """
    Persist a Python object (fitted scalers, norm stats, ...) with joblib.
    """
    try:
        dir_path = os.path.dirname(file_path)
        if dir_path:
            os.makedirs(dir_path, exist_ok=True)

        joblib.dump(obj, file_path)

    except Exception as e:
        raise CustomException(e, sys)


def load_object(file_path):
    """
    Load an object saved by save_object. Falls back to plain pickle for
    files written without joblib.
    """
    try:
        return joblib.load(file_path)

    except Exception:
        try:
            with open(file_path, "rb") as file_obj:
                return pickle.load(file_obj)
        except Exception as e:
            raise CustomException(e, sys)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def save_json(file_path: str, payload: Any) -> None:
    """Write ``payload`` as sorted, indented JSON; non-finite floats become null."""
    try:
        dir_path = os.path.dirname(file_path)
        if dir_path:
            os.makedirs(dir_path, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as file_obj:
            json.dump(_jsonable(payload), file_obj, indent=2, sort_keys=True)
            file_obj.write("\n")
    except Exception as e:
        raise CustomException(e, sys)


def load_json(file_path: str) -> Any:
    try:
        with open(file_path, encoding="utf-8") as file_obj:
            return json.load(file_obj)
    except Exception as e:
        raise CustomException(e, sys)


def save_checkpoint(file_path: str, arrays: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """
    Checkpoint layout (version 1):

        {"format": "probfm-checkpoint", "version": 1, "meta": {...},
         "arrays": {name: {"shape": [...], "data": [flat row-major values]}}}
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "arrays": {
            name: {"shape": list(np.shape(value)), "data": np.asarray(value, dtype=np.float64).ravel().tolist()}
            for name, value in arrays.items()
        },
    }
    save_json(file_path, payload)


def load_checkpoint(file_path: str):
    payload = load_json(file_path)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"{file_path} is not a {CHECKPOINT_FORMAT} document")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"unsupported checkpoint version {payload.get('version')}")

    arrays: Dict[str, np.ndarray] = {}
    for name, entry in payload["arrays"].items():
        data = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) != data.size:
            raise ContractError(f"array '{name}': shape {shape} does not match {data.size} values")
        arrays[name] = data.reshape(shape)
    return arrays, payload.get("meta", {})


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile between order statistics (inclusive definition)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("percentile of an empty array")
    return float(np.percentile(values, q, method="linear"))


def pearson_or_nan(a, b) -> float:
    """Pearson correlation, NaN when either vector has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ContractError("pearson correlation needs at least 2 points")
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(np.dot(da, da)))
    sb = math.sqrt(float(np.dot(db, db)))
    if sa == 0.0 or sb == 0.0:
        return float("nan")
    return float(np.dot(da, db) / (sa * sb))
