"""Evaluation harness: a shared one-step-ahead protocol for all models,
granularity sweeps over (tile size, bin minutes), history-length curves,
and deterministic report files.

Every model is scored on the same target bins: those test-range bins
with a full k-step history inside the test range. Reports are written
with round-trip float formatting; wall-clock timings go to a separate
sidecar so the report files are byte-stable across reruns.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np

from .baselines import naive_predict, var_fit, var_predict
from .geo import BoundingBox, build_square_grid
from .metrics import cpc, nrmse, rmse
from .model import CrowdNet, ModelConfig, aggregate_to_crowd, train_model
from .pipeline import (
    ODSeries,
    SplitRanges,
    TimeBinning,
    default_epoch,
    make_windows,
    od_from_trips,
    split_series,
)

MODEL_NAMES = ("naive", "var", "crowdnet")


class ExperimentError(ValueError):
    pass


def derive_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index * 7_919 + 1) % (2**31)


def worker_count(n_tasks: int) -> int:
    raw = os.environ.get("FLOWCAST_THREADS", "1")
    try:
        cap = max(1, int(raw))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_tasks))


def forecast_targets(split: SplitRanges, k: int) -> range:
    targets = range(split.test.start + k, split.test.stop)
    if len(targets) == 0:
        raise ExperimentError(
            f"test range of {len(split.test)} bins leaves no target after a k={k} history"
        )
    return targets


def crowd_values(series: np.ndarray, include_self: bool = False) -> np.ndarray:
    """(t, 2n) array of per-tile inflow then outflow, from a float OD series."""
    inflow = series.sum(axis=1)
    outflow = series.sum(axis=2)
    if not include_self:
        diag = np.einsum("tii->ti", series)
        inflow = inflow - diag
        outflow = outflow - diag
    return np.concatenate([inflow, outflow], axis=1)


def naive_forecasts(values: np.ndarray, targets: range, window: int) -> np.ndarray:
    return np.stack([naive_predict(values[:t], window) for t in targets])


def var_forecasts(values: np.ndarray, fit_bins: range, targets: range, p: int) -> np.ndarray:
    flat = values.reshape(values.shape[0], -1)
    model = var_fit(flat[fit_bins.start : fit_bins.stop], p)
    preds = np.stack([var_predict(model, flat[t - p : t]) for t in targets])
    return preds.reshape((len(targets),) + values.shape[1:])


def train_crowdnet(
    series: np.ndarray,
    split: SplitRanges,
    adjacency: np.ndarray,
    seed: int,
    k: int = 12,
    channels: tuple[int, int] = (64, 64),
    kernel_t: int = 3,
    epochs: int = 150,
    batch_size: int = 16,
    lr: float = 1e-4,
    patience: int = 10,
) -> CrowdNet:
    n = series.shape[1]
    config = ModelConfig(n=n, k=k, channels=tuple(channels), kernel_t=kernel_t, seed=seed)
    model = CrowdNet(config, adjacency)
    train_w = make_windows(series, split.train, k)
    try:
        val_w = make_windows(series, split.val, k)
    except ValueError:
        val_w = []
    train_model(
        model, train_w, val_w,
        epochs=epochs, batch_size=batch_size, lr=lr, patience=patience,
    )
    return model


def crowdnet_forecasts(model: CrowdNet, series: np.ndarray, targets: range) -> np.ndarray:
    k = model.config.k
    xs = np.stack([series[t - k : t] for t in targets])
    return model.predict(xs)[:, 0]


def score_forecasts(preds: np.ndarray, truths: np.ndarray, task: str) -> dict:
    """Pooled RMSE and range-normalized RMSE; overlap and per-direction
    extras depending on the task."""
    out = {"rmse": rmse(preds, truths), "nrmse": None, "cpc": None, "rmse_in": None, "rmse_out": None}
    f_max, f_min = float(truths.max()), float(truths.min())
    if f_max > f_min:
        out["nrmse"] = nrmse(out["rmse"], f_max, f_min)
    if task == "flow":
        vals = []
        for p, t in zip(preds, truths):
            clamped = np.maximum(p, 0.0)
            if clamped.sum() + t.sum() > 0:
                vals.append(cpc(clamped, t))
        if vals:
            out["cpc"] = float(np.mean(vals))
    elif task == "crowd":
        n = truths.shape[1] // 2
        out["rmse_in"] = rmse(preds[:, :n], truths[:, :n])
        out["rmse_out"] = rmse(preds[:, n:], truths[:, n:])
    else:
        raise ExperimentError(f"unknown task {task!r}; expected 'crowd' or 'flow'")
    return out


def evaluate_on_series(
    series: np.ndarray,
    split: SplitRanges,
    model_name: str,
    task: str = "crowd",
    seed: int = 0,
    k: int = 12,
    naive_window: int = 12,
    var_p: int = 8,
    include_self: bool = False,
    adjacency: np.ndarray | None = None,
    crowdnet_model: CrowdNet | None = None,
    model_kwargs: dict | None = None,
    train_kwargs: dict | None = None,
) -> dict:
    """Train/fit one model and score it on the shared test targets.

    ``series`` is the float OD tensor. For the crowd task the baselines
    forecast per-tile inflow/outflow directly, while the network always
    predicts the OD slice and is aggregated afterwards.
    """
    if model_name not in MODEL_NAMES:
        raise ExperimentError(f"unknown model {model_name!r}; expected one of {MODEL_NAMES}")
    if task not in ("crowd", "flow"):
        raise ExperimentError(f"unknown task {task!r}; expected 'crowd' or 'flow'")
    targets = forecast_targets(split, k)
    flows_truth = series[targets.start : targets.stop]
    crowd_all = crowd_values(series, include_self)

    if model_name == "crowdnet":
        model = crowdnet_model
        if model is None:
            if adjacency is None:
                adjacency = (series[split.train.start : split.train.stop].sum(axis=0) > 0).astype(np.uint8)
            model = train_crowdnet(
                series, split, adjacency, seed, k=k,
                **(model_kwargs or {}), **(train_kwargs or {}),
            )
        od_preds = crowdnet_forecasts(model, series, targets)
        if task == "flow":
            preds, truths = od_preds, flows_truth
        else:
            inflow, outflow = aggregate_to_crowd(od_preds[:, None], include_self)
            preds = np.concatenate([inflow, outflow], axis=1)
            truths = crowd_all[targets.start : targets.stop]
    else:
        values = series if task == "flow" else crowd_all
        truths = values[targets.start : targets.stop]
        if model_name == "naive":
            preds = naive_forecasts(values, targets, naive_window)
        else:
            preds = var_forecasts(values, split.train, targets, var_p)
    return score_forecasts(preds, truths, task)


@dataclass
class EvalRecord:
    tile_size_m: float | None
    bin_minutes: int
    model_name: str
    task: str
    rmse: float | None = None
    nrmse: float | None = None
    cpc: float | None = None
    rmse_in: float | None = None
    rmse_out: float | None = None
    seed: int = 0
    error: str | None = None
    runtime_s: float | None = None  # volatile; written to the timings sidecar only


REPORT_FIELDS = (
    "tile_size_m", "bin_minutes", "model_name", "task",
    "rmse", "nrmse", "cpc", "rmse_in", "rmse_out", "seed", "error",
)


def run_sweep(
    trips: list,
    tile_sizes: list[float],
    bin_minutes_list: list[int],
    models: list[str],
    seed: int = 0,
    task: str = "crowd",
    test_days: int = 1,
    val_fraction: float = 0.2,
    k: int = 12,
    naive_window: int = 12,
    var_p: int = 8,
    include_self: bool = False,
    bbox: BoundingBox | None = None,
    epoch_start=None,
    model_kwargs: dict | None = None,
    train_kwargs: dict | None = None,
) -> list[EvalRecord]:
    """One record per (tile size, bin minutes, model) cell.

    Each cell rebuilds the tessellation and OD series from the raw
    trips, splits chronologically, and scores its model on the test
    targets. Cell failures become error strings; the sweep continues.
    Cells run on up to FLOWCAST_THREADS workers; records keep grid order
    regardless.
    """
    if not tile_sizes or not bin_minutes_list or not models:
        raise ExperimentError("sweep needs at least one tile size, bin width, and model")
    if not trips:
        raise ExperimentError("sweep needs trips")
    if bbox is None:
        bbox = bbox_of_trips(trips)
    if epoch_start is None:
        epoch_start = default_epoch([t.start_time for t in trips])
    cells = list(product(tile_sizes, bin_minutes_list, models))

    def run_cell(args) -> EvalRecord:
        index, (tile, bin_m, model_name) = args
        cell_seed = derive_seed(seed, index)
        record = EvalRecord(tile, bin_m, model_name, task, seed=cell_seed)
        t0 = time.perf_counter()
        try:
            tess = build_square_grid(bbox, tile)
            od, _ = od_from_trips(trips, tess, TimeBinning(epoch_start, bin_m))
            split = split_series(od, test_days, val_fraction)
            scores = evaluate_on_series(
                od.data.astype(np.float64), split, model_name, task,
                seed=cell_seed, k=k, naive_window=naive_window, var_p=var_p,
                include_self=include_self,
                model_kwargs=model_kwargs, train_kwargs=train_kwargs,
            )
            for key, value in scores.items():
                setattr(record, key, value)
        except Exception as exc:  # per-cell isolation
            record.error = f"{type(exc).__name__}: {exc}"
        record.runtime_s = time.perf_counter() - t0
        return record

    workers = worker_count(len(cells))
    if workers == 1:
        return [run_cell(a) for a in enumerate(cells)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_cell, enumerate(cells)))


def bbox_of_trips(trips: list) -> BoundingBox:
    lons = [p for t in trips for p in (t.start.lon, t.end.lon)]
    lats = [p for t in trips for p in (t.start.lat, t.end.lat)]
    min_lon, max_lon = min(lons), max(lons)
    min_lat, max_lat = min(lats), max(lats)
    pad = 1e-9  # keep the box non-degenerate for point-like datasets
    if min_lon == max_lon:
        min_lon, max_lon = min_lon - pad, max_lon + pad
    if min_lat == max_lat:
        min_lat, max_lat = min_lat - pad, max_lat + pad
    return BoundingBox(min_lon, min_lat, max_lon, max_lat)


def temporal_importance(
    od: ODSeries | np.ndarray,
    k_values: list[int],
    test_days: int = 1,
    val_fraction: float = 0.2,
    seed: int = 0,
    task: str = "crowd",
    include_self: bool = False,
    split: SplitRanges | None = None,
    model_kwargs: dict | None = None,
    train_kwargs: dict | None = None,
) -> tuple[list[tuple[int, float]], list[tuple[int, str]]]:
    """Test RMSE as a function of history length, one trained model per k.

    Returns (curve, skipped): infeasible history lengths are skipped
    with a reason instead of failing the run.
    """
    if isinstance(od, ODSeries):
        series = od.data.astype(np.float64)
        if split is None:
            split = split_series(od, test_days, val_fraction)
    else:
        series = np.asarray(od, dtype=np.float64)
        if split is None:
            raise ExperimentError("an explicit split is required for a bare array series")
    curve: list[tuple[int, float]] = []
    skipped: list[tuple[int, str]] = []
    for k in k_values:
        try:
            scores = evaluate_on_series(
                series, split, "crowdnet", task, seed=seed, k=k,
                include_self=include_self,
                model_kwargs=model_kwargs, train_kwargs=train_kwargs,
            )
            curve.append((k, scores["rmse"]))
        except ValueError as exc:
            skipped.append((k, f"{type(exc).__name__}: {exc}"))
    return curve, skipped


# ---------------------------------------------------------------------------
# report files

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest round-trip form
    return str(value)


def write_report(records: list[EvalRecord], out_dir: str) -> dict[str, str]:
    """report.csv/report.json (deterministic) plus timings.csv (volatile)."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "report.csv")
    json_path = os.path.join(out_dir, "report.json")
    timing_path = os.path.join(out_dir, "timings.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_FIELDS)
        for r in records:
            writer.writerow([_fmt(getattr(r, f)) for f in REPORT_FIELDS])
    payload = [{f: getattr(r, f) for f in REPORT_FIELDS} for r in records]
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(timing_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "tile_size_m", "bin_minutes", "model_name", "runtime_s"])
        for i, r in enumerate(records):
            writer.writerow([i, _fmt(r.tile_size_m), r.bin_minutes, r.model_name, _fmt(r.runtime_s)])
    return {"csv": csv_path, "json": json_path, "timings": timing_path}
