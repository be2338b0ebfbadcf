"""Forecast quality metrics: RMSE, range-normalized RMSE, and the
common-part-of-flows overlap score."""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError


class MetricError(ValueError):
    pass


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"rmse: shapes {pred.shape} and {truth.shape} differ")
    diff = pred - truth
    return float(np.sqrt((diff * diff).mean()))


def nrmse(rmse_value: float, f_max: float, f_min: float) -> float:
    """RMSE divided by the observed flow range of the ground truth."""
    if not f_max > f_min:
        raise MetricError(f"flow range is degenerate: max {f_max} <= min {f_min}")
    return rmse_value / (f_max - f_min)


def cpc(pred_od, true_od) -> float:
    """Common part of flows: 2*sum(min)/(sum(pred)+sum(true)).

    1 when the flow sets are identical, 0 when their supports are
    disjoint; symmetric and invariant to scaling both arguments.
    """
    pred = np.asarray(pred_od, dtype=np.float64)
    true = np.asarray(true_od, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeError(f"cpc: shapes {pred.shape} and {true.shape} differ")
    if pred.min(initial=0.0) < 0 or true.min(initial=0.0) < 0:
        raise MetricError("cpc requires non-negative flows")
    denom = pred.sum() + true.sum()
    if denom == 0:
        raise MetricError("cpc undefined: both flow matrices are all-zero")
    return float(2.0 * np.minimum(pred, true).sum() / denom)
