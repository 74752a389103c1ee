import numpy as np

from utils.errors import ConfigError, ShapeMismatchError


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatchError(f"prediction shape {pred.shape} vs truth shape {truth.shape}")
    if pred.size == 0:
        raise ShapeMismatchError("metrics need at least one value")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def r2(pred, truth) -> float:
    """1 - SS_res / SS_tot."""
    pred, truth = _pair(pred, truth)
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConfigError("r2 is undefined for constant targets")
    return 1.0 - float(np.sum((truth - pred) ** 2)) / ss_tot
