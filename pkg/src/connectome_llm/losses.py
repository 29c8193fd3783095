"""Outlier-weighted MSE and its quantile threshold."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, mean, mul, power
from .errors import ContractError
from .revrin import quantile


def fit_quantile_threshold(y, tau: float) -> float:
    """tau-quantile of the training targets (type-7 interpolation)."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size == 0:
        raise ContractError("cannot fit a threshold on an empty target set", module="train_eval")
    return quantile(y, tau)


def sample_weights(target, threshold: float, weight: float) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    return np.where(target > threshold, float(weight), 1.0)


def ow_mse(pred, target, threshold: float, weight: float) -> Tensor:
    """mean_i w_i (pred_i - y_i)^2 with w_i = weight where y_i > threshold, else 1."""
    if np.size(target) == 0:
        raise ContractError("ow_mse on an empty batch", module="train_eval")
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    resid = pred - target
    return mean(mul(power(resid, 2.0), sample_weights(target, threshold, weight)))


def mse(pred, target) -> Tensor:
    if np.size(target) == 0:
        raise ContractError("mse on an empty batch", module="train_eval")
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    return mean(power(pred - target, 2.0))
