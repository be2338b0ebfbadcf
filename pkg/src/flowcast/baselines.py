"""Reference forecasters: trailing-mean and vector autoregression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BaselineError(ValueError):
    pass


def naive_predict(history: np.ndarray, window_n: int = 12) -> np.ndarray:
    """Elementwise mean of the last ``window_n`` slices of (t, ...) history."""
    history = np.asarray(history, dtype=np.float64)
    if window_n < 1:
        raise BaselineError(f"window_n must be >= 1, got {window_n}")
    if history.shape[0] < window_n:
        raise BaselineError(f"history has {history.shape[0]} slices, need {window_n}")
    return history[-window_n:].mean(axis=0)


@dataclass
class VarModel:
    """y_t = c + sum_i A_i y_{t-i}; coefficients stacked as (p, d, d)."""

    p: int
    coef: np.ndarray
    intercept: np.ndarray
    fitted: bool = False


def var_fit(series: np.ndarray, p: int = 8, ridge: float = 1e-8) -> VarModel:
    """Least squares on the stacked lag regression, per output dimension.

    The normal equations get a ridge term (default 1e-8) so constant or
    collinear series stay solvable.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2:
        raise BaselineError(f"series must be 2-D (t, d), got shape {series.shape}")
    t, d = series.shape
    if p < 1:
        raise BaselineError(f"lag order must be >= 1, got {p}")
    min_rows = p + d * p + 1
    if t < min_rows:
        raise BaselineError(f"series has {t} rows; need at least {min_rows} for p={p}, d={d}")
    rows = t - p
    z = np.empty((rows, 1 + d * p))
    z[:, 0] = 1.0
    for i in range(1, p + 1):
        z[:, 1 + (i - 1) * d : 1 + i * d] = series[p - i : t - i]
    y = series[p:]
    gram = z.T @ z
    gram[np.diag_indices_from(gram)] += ridge
    beta = np.linalg.solve(gram, z.T @ y)  # (1 + d*p, d)
    intercept = beta[0].copy()
    coef = np.stack([beta[1 + (i - 1) * d : 1 + i * d].T.copy() for i in range(1, p + 1)])
    return VarModel(p=p, coef=coef, intercept=intercept, fitted=True)


def var_predict(model: VarModel, recent: np.ndarray) -> np.ndarray:
    """One-step-ahead forecast from the last p observations (oldest first)."""
    if not model.fitted:
        raise BaselineError("model is not fitted")
    recent = np.asarray(recent, dtype=np.float64)
    d = model.intercept.shape[0]
    if recent.shape != (model.p, d):
        raise BaselineError(f"recent must have shape ({model.p}, {d}), got {recent.shape}")
    out = model.intercept.copy()
    for i in range(1, model.p + 1):
        out += model.coef[i - 1] @ recent[model.p - i]
    return out
