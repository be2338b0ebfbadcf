"""Command-line surface: ingest, train, predict, evaluate, sweep, export.

Settings come from defaults, then an optional JSON config file, then
explicit flags. All outputs land under --out; inputs are never touched.
Each command prints a JSON summary to stdout and exits 0 only when its
postcondition holds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import experiments, pipeline
from .autodiff import load_checkpoint, save_checkpoint
from .geo import Tessellation, build_square_grid, load_irregular_geojson
from .experiments import (
    EvalRecord,
    crowd_values,
    crowdnet_forecasts,
    evaluate_on_series,
    forecast_targets,
    run_sweep,
    temporal_importance,
    write_report,
)
from .model import (
    ConfigError,
    CrowdNet,
    ModelConfig,
    adjacency_fingerprint,
    aggregate_to_crowd,
    train_model,
)
from .pipeline import (
    PipelineError,
    TimeBinning,
    adjacency_from_od,
    default_epoch,
    load_od,
    make_windows,
    od_from_gps,
    od_from_trips,
    parse_gps_csv,
    parse_trips_csv,
    save_od,
    split_series,
)

DEFAULTS = {
    "bin_minutes": 60,
    "tile_size_m": 1000.0,
    "k": 12,
    "l": 1,
    "channels": (64, 64),
    "kernel_t": 3,
    "epochs": 150,
    "batch": 16,
    "lr": 1e-4,
    "patience": 10,
    "test_days": 10,
    "val_fraction": 0.2,
    "include_self_flows": False,
    "naive_window": 12,
    "var_p": 8,
    "seed": 0,
    "task": "crowd",
}


class CliError(ValueError):
    pass


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _settings(args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags."""
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    merged["channels"] = tuple(merged["channels"])
    return merged


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out

def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _write_csv(path: str, header: list[str], rows) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt_float(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# ingest

def _check_malformed(info: pipeline.ParsedCsv) -> None:
    # tolerate isolated bad rows, abort past a 1% threshold (min 1 row)
    allowed = max(1, info.rows_total // 100)
    if len(info.malformed) > allowed:
        rows = ", ".join(str(r) for r, _ in info.malformed[:20])
        raise CliError(
            f"{len(info.malformed)} malformed rows of {info.rows_total} "
            f"exceeds the 1% threshold (rows: {rows})"
        )


def _build_tessellation(args, points_lonlat, tile_size_m: float) -> Tessellation:
    if getattr(args, "tess_geojson", None):
        return load_irregular_geojson(args.tess_geojson)
    lons = np.array([p[0] for p in points_lonlat])
    lats = np.array([p[1] for p in points_lonlat])
    pad = 1e-9
    min_lon, max_lon = float(lons.min()), float(lons.max())
    min_lat, max_lat = float(lats.min()), float(lats.max())
    if min_lon == max_lon:
        min_lon, max_lon = min_lon - pad, max_lon + pad
    if min_lat == max_lat:
        min_lat, max_lat = min_lat - pad, max_lat + pad
    from .geo import BoundingBox

    bbox = BoundingBox(min_lon, min_lat, max_lon, max_lat)
    return build_square_grid(bbox, tile_size_m)


def cmd_ingest(args) -> int:
    settings = _settings(args)
    out = _out_dir(args)
    if bool(args.trips) == bool(args.gps):
        raise CliError("ingest needs exactly one of --trips or --gps")
    if args.trips:
        trips, info = parse_trips_csv(args.trips)
        _check_malformed(info)
        if not trips:
            raise CliError(f"{args.trips}: no usable rows")
        points = [(t.start.lon, t.start.lat) for t in trips] + [(t.end.lon, t.end.lat) for t in trips]
        tess = _build_tessellation(args, points, settings["tile_size_m"])
        epoch = parse_epoch(args.epoch) if args.epoch else default_epoch([t.start_time for t in trips])
        binning = TimeBinning(epoch, settings["bin_minutes"])
        od, stats = od_from_trips(trips, tess, binning)
    else:
        traces, info = parse_gps_csv(args.gps)
        _check_malformed(info)
        if not traces:
            raise CliError(f"{args.gps}: no usable rows")
        points = [(p.lon, p.lat) for tr in traces for _, p in tr.points]
        tess = _build_tessellation(args, points, settings["tile_size_m"])
        all_ts = [ts for tr in traces for ts, _ in tr.points]
        epoch = parse_epoch(args.epoch) if args.epoch else default_epoch(all_ts)
        binning = TimeBinning(epoch, settings["bin_minutes"])
        od, stats = od_from_gps(traces, tess, binning)
    od_path = os.path.join(out, "od.ods")
    tess_path = os.path.join(out, "tessellation.geojson")
    save_od(od, od_path)
    tess.save_geojson(tess_path)
    summary = {
        "rows_read": info.rows_total,
        "rows_malformed": len(info.malformed),
        "records": stats.as_dict(),
        "tiles": tess.n,
        "bins": od.t_bins,
        "bin_minutes": binning.bin_minutes,
        "epoch_start": epoch.isoformat(),
        "od_file": od_path,
        "tessellation_file": tess_path,
    }
    if tess.kind == "square":
        summary["grid"] = {"rows": tess.rows, "cols": tess.cols, "side_m": tess.side_m}
    _emit(summary)
    return 0


def parse_epoch(text: str) -> datetime:
    return pipeline.parse_timestamp(text)


# ---------------------------------------------------------------------------
# train

def _sidecar_path(checkpoint_path: str) -> str:
    base, _ = os.path.splitext(checkpoint_path)
    return base + ".json"


def cmd_train(args) -> int:
    settings = _settings(args)
    out = _out_dir(args)
    od = load_od(args.ods)
    config = ModelConfig(
        n=od.n,
        k=settings["k"],
        l=settings["l"],
        channels=settings["channels"],
        kernel_t=settings["kernel_t"],
        seed=settings["seed"],
    )  # raises ConfigError before any training when k is too small
    split = split_series(od, settings["test_days"], settings["val_fraction"])
    adjacency = adjacency_from_od(od, split.train)
    series = od.data.astype(np.float64)
    train_w = make_windows(series, split.train, config.k)
    try:
        val_w = make_windows(series, split.val, config.k)
    except ValueError:
        val_w = []
    model = CrowdNet(config, adjacency)
    result = train_model(
        model, train_w, val_w,
        epochs=settings["epochs"], batch_size=settings["batch"],
        lr=settings["lr"], patience=settings["patience"],
    )
    ckpt_path = os.path.join(out, "checkpoint.cnw1")
    save_checkpoint(ckpt_path, model.state_arrays())
    sidecar = {
        "format": "CNW1",
        "config": config.as_dict(),
        "adjacency": adjacency_fingerprint(adjacency),
        "split": {"test_days": settings["test_days"], "val_fraction": settings["val_fraction"]},
        "binning": {
            "epoch_start": od.binning.epoch_start.isoformat(),
            "bin_minutes": od.binning.bin_minutes,
        },
        "include_self_flows": settings["include_self_flows"],
    }
    with open(_sidecar_path(ckpt_path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    history_path = os.path.join(out, "history.csv")
    _write_csv(
        history_path,
        ["epoch", "train_mse", "val_mse"],
        [[h["epoch"], _fmt_float(h["train_mse"]), _fmt_float(h["val_mse"])] for h in result.history],
    )
    _emit(
        {
            "epochs_run": len(result.history),
            "best_epoch": result.best_epoch,
            "best_val_mse": result.best_val,
            "stopped_early": result.stopped_early,
            "checkpoint": ckpt_path,
            "history": history_path,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# shared checkpoint loading

def _load_model(ods_path: str, ckpt_path: str):
    od = load_od(ods_path)
    with open(_sidecar_path(ckpt_path), encoding="utf-8") as fh:
        sidecar = json.load(fh)
    cfg = sidecar["config"]
    config = ModelConfig(
        n=cfg["n"], k=cfg["k"], l=cfg["l"], channels=tuple(cfg["channels"]),
        kernel_t=cfg["kernel_t"], eps_bn=cfg["eps_bn"], seed=cfg["seed"],
    )
    split = split_series(od, sidecar["split"]["test_days"], sidecar["split"]["val_fraction"])
    adjacency = adjacency_from_od(od, split.train)
    fingerprint = adjacency_fingerprint(adjacency)
    if fingerprint != sidecar["adjacency"]:
        raise CliError(
            "adjacency fingerprint mismatch: the checkpoint was trained on a "
            f"different graph (checkpoint {sidecar['adjacency']}, data {fingerprint})"
        )
    model = CrowdNet(config, adjacency)
    model.load_state(load_checkpoint(ckpt_path))
    include_self = bool(sidecar.get("include_self_flows", False))
    return od, split, model, include_self


# ---------------------------------------------------------------------------
# predict

def cmd_predict(args) -> int:
    out = _out_dir(args)
    od, split, model, include_self = _load_model(args.ods, args.checkpoint)
    series = od.data.astype(np.float64)
    targets = forecast_targets(split, model.config.k)
    preds = crowdnet_forecasts(model, series, targets)
    flows_path = os.path.join(out, "pred_flows.csv")
    rows = []
    for offset, t in enumerate(targets):
        slice_ = preds[offset]
        for i in range(od.n):
            for j in range(od.n):
                value = slice_[i, j]
                if value != 0.0:
                    rows.append([t, i, j, _fmt_float(value)])
    _write_csv(flows_path, ["time_bin", "origin", "destination", "flow"], rows)
    inflow, outflow = aggregate_to_crowd(preds[:, None], include_self)
    crowd_path = os.path.join(out, "pred_crowd.csv")
    crowd_rows = []
    for offset, t in enumerate(targets):
        for tile in range(od.n):
            crowd_rows.append([t, tile, _fmt_float(inflow[offset, tile]), _fmt_float(outflow[offset, tile])])
    _write_csv(crowd_path, ["time_bin", "tile", "inflow", "outflow"], crowd_rows)
    _emit(
        {
            "targets": {"start": targets.start, "stop": targets.stop},
            "flows_csv": flows_path,
            "crowd_csv": crowd_path,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(args) -> int:
    settings = _settings(args)
    out = _out_dir(args)
    task = settings["task"]
    if args.checkpoint:
        od, split, model, include_self = _load_model(args.ods, args.checkpoint)
        k = model.config.k
    else:
        od = load_od(args.ods)
        split = split_series(od, settings["test_days"], settings["val_fraction"])
        model = None
        include_self = settings["include_self_flows"]
        k = settings["k"]
    names = [m.strip() for m in (args.models or "naive,var,crowdnet").split(",") if m.strip()]
    if "crowdnet" in names and model is None:
        raise CliError("evaluating the network needs --checkpoint")
    series = od.data.astype(np.float64)
    records = []
    for name in names:
        record = EvalRecord(None, od.binning.bin_minutes, name, task, seed=settings["seed"])
        try:
            scores = evaluate_on_series(
                series, split, name, task,
                seed=settings["seed"], k=k,
                naive_window=settings["naive_window"], var_p=settings["var_p"],
                include_self=include_self, crowdnet_model=model if name == "crowdnet" else None,
            )
            for key, value in scores.items():
                setattr(record, key, value)
        except Exception as exc:
            record.error = f"{type(exc).__name__}: {exc}"
        records.append(record)
    paths = write_report(records, out)
    _emit(
        {
            "task": task,
            "models": {
                r.model_name: {"rmse": r.rmse, "nrmse": r.nrmse, "cpc": r.cpc, "error": r.error}
                for r in records
            },
            "report_csv": paths["csv"],
            "report_json": paths["json"],
        }
    )
    return 0


# ---------------------------------------------------------------------------
# sweep

def cmd_sweep(args) -> int:
    settings = _settings(args)
    out = _out_dir(args)
    if args.temporal_importance:
        if not args.ods:
            raise CliError("--temporal-importance needs --ods")
        if not args.k_values:
            raise CliError("--temporal-importance needs --k-values")
        od = load_od(args.ods)
        curve, skipped = temporal_importance(
            od,
            _int_list(args.k_values),
            test_days=settings["test_days"],
            val_fraction=settings["val_fraction"],
            seed=settings["seed"],
            task=settings["task"],
            include_self=settings["include_self_flows"],
            model_kwargs={"channels": settings["channels"], "kernel_t": settings["kernel_t"]},
            train_kwargs={
                "epochs": settings["epochs"], "batch_size": settings["batch"],
                "lr": settings["lr"], "patience": settings["patience"],
            },
        )
        path = os.path.join(out, "timportance.csv")
        rows = [[k, _fmt_float(v), "ok", ""] for k, v in curve]
        rows += [[k, "", "skipped", reason] for k, reason in skipped]
        _write_csv(path, ["k", "rmse", "status", "note"], rows)
        _emit({"curve": [[k, v] for k, v in curve], "skipped": skipped, "csv": path})
        return 0
    if not args.trips:
        raise CliError("sweep needs --trips")
    trips, info = parse_trips_csv(args.trips)
    _check_malformed(info)
    tile_sizes = _float_list(args.tile_sizes) if args.tile_sizes else [settings["tile_size_m"]]
    bin_set = _int_list(args.bin_minutes_set) if args.bin_minutes_set else [settings["bin_minutes"]]
    models = [m.strip() for m in (args.models or "naive,var").split(",") if m.strip()]
    records = run_sweep(
        trips, tile_sizes, bin_set, models,
        seed=settings["seed"], task=settings["task"],
        test_days=settings["test_days"], val_fraction=settings["val_fraction"],
        k=settings["k"], naive_window=settings["naive_window"], var_p=settings["var_p"],
        include_self=settings["include_self_flows"],
        model_kwargs={"channels": settings["channels"], "kernel_t": settings["kernel_t"]},
        train_kwargs={
            "epochs": settings["epochs"], "batch_size": settings["batch"],
            "lr": settings["lr"], "patience": settings["patience"],
        },
    )
    paths = write_report(records, out)
    _emit(
        {
            "cells": len(records),
            "failed": sum(1 for r in records if r.error),
            "report_csv": paths["csv"],
            "report_json": paths["json"],
            "timings_csv": paths["timings"],
        }
    )
    return 0


# ---------------------------------------------------------------------------
# export

def cmd_export(args) -> int:
    out = _out_dir(args)
    od, split, model, include_self = _load_model(args.ods, args.checkpoint)
    with open(args.tess_geojson, encoding="utf-8") as fh:
        tess_doc = json.load(fh)
    feats = tess_doc.get("features", [])
    if len(feats) != od.n:
        raise CliError(f"tessellation has {len(feats)} features but the OD series has {od.n} tiles")
    feats = sorted(feats, key=lambda f: f["properties"]["id"])
    series = od.data.astype(np.float64)
    targets = forecast_targets(split, model.config.k)
    preds = crowdnet_forecasts(model, series, targets)
    truth = series[targets.start : targets.stop]
    pred_in, pred_out = aggregate_to_crowd(preds[:, None], include_self)
    true_crowd = crowd_values(series, include_self)[targets.start : targets.stop]
    true_in, true_out = true_crowd[:, : od.n], true_crowd[:, od.n :]

    for idx, feat in enumerate(feats):
        ring = np.asarray(feat["geometry"]["coordinates"][0], dtype=np.float64)
        centroid = ring[:-1].mean(axis=0)
        feat.setdefault("properties", {}).update(
            {
                "id": idx,
                "centroid_lon": float(centroid[0]),
                "centroid_lat": float(centroid[1]),
                "inflow_real": float(true_in[:, idx].sum()),
                "outflow_real": float(true_out[:, idx].sum()),
                "inflow_pred": float(pred_in[:, idx].sum()),
                "outflow_pred": float(pred_out[:, idx].sum()),
            }
        )
    tiles_path = os.path.join(out, "tiles.geojson")
    with open(tiles_path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh)
        fh.write("\n")

    ts_path = os.path.join(out, "timeseries.csv")
    ts_rows = []
    for offset, t in enumerate(targets):
        for tile in range(od.n):
            ts_rows.append(
                [
                    t, tile,
                    _fmt_float(true_in[offset, tile]), _fmt_float(true_out[offset, tile]),
                    _fmt_float(pred_in[offset, tile]), _fmt_float(pred_out[offset, tile]),
                ]
            )
    _write_csv(
        ts_path,
        ["time_bin", "tile", "inflow_real", "outflow_real", "inflow_pred", "outflow_pred"],
        ts_rows,
    )

    od_path = os.path.join(out, "od_matrix.csv")
    real_sum = truth.sum(axis=0)
    pred_sum = preds.sum(axis=0)
    od_rows = [
        [i, j, _fmt_float(real_sum[i, j]), _fmt_float(pred_sum[i, j])]
        for i in range(od.n)
        for j in range(od.n)
    ]
    _write_csv(od_path, ["origin", "destination", "flow_real", "flow_pred"], od_rows)

    edges_path = os.path.join(out, "edges.csv")
    mean_pred = np.maximum(preds, 0.0).mean(axis=0)
    edge_rows = [
        [i, j, _fmt_float(mean_pred[i, j])]
        for i in range(od.n)
        for j in range(od.n)
        if mean_pred[i, j] > 0.0
    ]
    _write_csv(edges_path, ["origin", "destination", "flow"], edge_rows)

    _emit(
        {
            "tiles_geojson": tiles_path,
            "timeseries_csv": ts_path,
            "od_matrix_csv": od_path,
            "edges_csv": edges_path,
            "targets": {"start": targets.start, "stop": targets.stop},
        }
    )
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON settings file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", help="output directory (default: current)")


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--k", type=int, default=None, help="history length")
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--batch", type=int, default=None)
    sub.add_argument("--lr", type=float, default=None)
    sub.add_argument("--patience", type=int, default=None)
    sub.add_argument("--kernel-t", dest="kernel_t", type=int, default=None)
    sub.add_argument(
        "--channels", type=_int_list, default=None, help="two comma-separated widths"
    )
    sub.add_argument("--test-days", dest="test_days", type=int, default=None)
    sub.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)
    sub.add_argument(
        "--include-self-flows", dest="include_self_flows", action="store_const",
        const=True, default=None,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcast",
        description="Crowd-flow forecasting over spatial tessellations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="records CSV to a binned OD tensor file")
    _add_common(p)
    p.add_argument("--trips", help="trip CSV path")
    p.add_argument("--gps", help="GPS CSV path")
    p.add_argument("--tess-geojson", dest="tess_geojson", help="polygon tessellation")
    p.add_argument("--tile-size-m", dest="tile_size_m", type=float, default=None)
    p.add_argument("--bin-minutes", dest="bin_minutes", type=int, default=None)
    p.add_argument("--epoch", help="override the binning epoch (ISO-8601)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the network on an OD tensor file")
    _add_common(p)
    p.add_argument("--ods", required=True, help="OD tensor file from ingest")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write test-range predictions as CSV")
    _add_common(p)
    p.add_argument("--ods", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint .cnw1 path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score models on the test range")
    _add_common(p)
    p.add_argument("--ods", required=True)
    p.add_argument("--checkpoint", help="include the trained network")
    p.add_argument("--models", help="comma list: naive,var,crowdnet")
    p.add_argument("--task", choices=("crowd", "flow"), default=None)
    _add_model_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid of (tile size, bin width, model) cells")
    _add_common(p)
    p.add_argument("--trips", help="trip CSV path")
    p.add_argument("--tile-sizes", dest="tile_sizes", help="comma list of meters")
    p.add_argument("--bin-minutes-set", dest="bin_minutes_set", help="comma list of minutes")
    p.add_argument("--models", help="comma list: naive,var,crowdnet")
    p.add_argument("--task", choices=("crowd", "flow"), default=None)
    p.add_argument(
        "--temporal-importance", dest="temporal_importance", action="store_true",
        help="train one network per history length instead of the grid sweep",
    )
    p.add_argument("--ods", help="OD file for --temporal-importance")
    p.add_argument("--k-values", dest="k_values", help="comma list of history lengths")
    _add_model_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="plotting payloads: GeoJSON, time series, edges")
    _add_common(p)
    p.add_argument("--ods", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tess-geojson", dest="tess_geojson", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
