"""The five renderers. Each takes input paths, an output path, and the
optional focus tile, draws with the Agg backend, and writes a raster image.

Determinism: features, edges, and series keys are always sorted before
drawing, so identical inputs give identical images.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.collections import LineCollection, PolyCollection

from .io import VizError, floats, ints, read_features, read_table

TIMESERIES_SCHEMA = (
    "time_bin", "tile", "inflow_real", "outflow_real", "inflow_pred", "outflow_pred",
)
OD_SCHEMA = ("origin", "destination", "flow_real", "flow_pred")
EDGE_SCHEMA = ("origin", "destination", "flow")
HEATMAP_PROPS = ("id", "inflow_real", "inflow_pred")
NETWORK_PROPS = ("id", "centroid_lon", "centroid_lat", "inflow_pred")
IMPORTANCE_SCHEMA = ("k", "rmse", "status", "note")
REPORT_SCHEMA = (
    "tile_size_m", "bin_minutes", "model_name", "task",
    "rmse", "nrmse", "cpc", "rmse_in", "rmse_out", "seed", "error",
)


def _save(fig, out: str) -> str:
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)
    return out


def _one_input(kind: str, inputs: tuple[str, ...]) -> str:
    if len(inputs) != 1:
        raise VizError(f"{kind} takes exactly one --in file, got {len(inputs)}")
    return inputs[0]


def _no_focus(kind: str, focus) -> None:
    if focus is not None:
        raise VizError(f"--focus-node does not apply to '{kind}' plots")


def _rings(feat) -> np.ndarray:
    return np.asarray(feat["geometry"]["coordinates"][0], dtype=np.float64)


def render_heatmap(inputs, out, focus) -> str:
    path = _one_input("heatmap", inputs)
    feats = read_features(path, HEATMAP_PROPS, need_geometry=True)
    ids = [int(f["properties"]["id"]) for f in feats]
    if focus is not None and focus not in ids:
        raise VizError(f"tile id {focus} not in {path} (ids {ids[0]}..{ids[-1]})")
    polys = [_rings(f) for f in feats]
    real = np.array([float(f["properties"]["inflow_real"]) for f in feats])
    pred = np.array([float(f["properties"]["inflow_pred"]) for f in feats])
    vmin = min(0.0, real.min(), pred.min())
    vmax = max(real.max(), pred.max(), vmin + 1e-12)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5), sharey=True)
    for ax, values, title in ((axes[0], real, "observed"), (axes[1], pred, "predicted")):
        coll = PolyCollection(polys, array=values, cmap="viridis", edgecolor="white",
                              linewidth=0.5)
        coll.set_clim(vmin, vmax)
        ax.add_collection(coll)
        if focus is not None:
            ring = polys[ids.index(focus)]
            ax.plot(ring[:, 0], ring[:, 1], color="red", linewidth=2.0)
        ax.autoscale_view()
        ax.set_aspect("equal")
        ax.set_title(f"{title} inflow")
        ax.set_xlabel("longitude")
    axes[0].set_ylabel("latitude")
    fig.colorbar(coll, ax=axes, label="crowd flow", fraction=0.046)
    return _save(fig, out)


def render_timeseries(inputs, out, focus) -> str:
    path = _one_input("timeseries", inputs)
    table = read_table(path, TIMESERIES_SCHEMA)
    tiles = np.array(ints(table["tile"]))
    bins = np.array(ints(table["time_bin"]))
    cols = {name: np.array(floats(table[name])) for name in TIMESERIES_SCHEMA[2:]}
    if focus is not None:
        if focus not in tiles:
            raise VizError(f"tile id {focus} not in {path}")
        keep = tiles == focus
        bins, cols = bins[keep], {k: v[keep] for k, v in cols.items()}
        scope = f"tile {focus}"
    else:
        scope = "all tiles"
    order = np.argsort(bins, kind="stable")
    bins = bins[order]
    xs = np.unique(bins)
    series = {}
    for name, values in cols.items():
        values = values[order]
        series[name] = np.array([values[bins == x].sum() for x in xs])
    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.plot(xs, series["inflow_real"], color="C0", label="inflow observed")
    ax.plot(xs, series["inflow_pred"], color="C0", linestyle="--", label="inflow predicted")
    ax.plot(xs, series["outflow_real"], color="C3", label="outflow observed")
    ax.plot(xs, series["outflow_pred"], color="C3", linestyle="--", label="outflow predicted")
    ax.set_xlabel("time bin")
    ax.set_ylabel("crowd flow")
    ax.set_title(f"predicted vs observed crowd flow ({scope})")
    ax.legend()
    fig.tight_layout()
    return _save(fig, out)


def render_od_matrix(inputs, out, focus) -> str:
    _no_focus("od_matrix", focus)
    path = _one_input("od_matrix", inputs)
    table = read_table(path, OD_SCHEMA)
    origins = ints(table["origin"])
    dests = ints(table["destination"])
    if not origins:
        raise VizError(f"{path}: no rows")
    n = max(max(origins), max(dests)) + 1
    real = np.zeros((n, n))
    pred = np.zeros((n, n))
    for i, j, fr, fp in zip(origins, dests, floats(table["flow_real"]),
                            floats(table["flow_pred"])):
        real[i, j] = fr
        pred[i, j] = fp
    vmax = max(real.max(), pred.max(), 1e-12)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for ax, mat, title in ((axes[0], real, "observed"), (axes[1], pred, "predicted")):
        im = ax.imshow(mat, cmap="magma", vmin=0.0, vmax=vmax)
        ax.set_title(f"{title} flows")
        ax.set_xlabel("destination tile")
        ax.set_ylabel("origin tile")
    fig.colorbar(im, ax=axes, label="flow", fraction=0.046)
    return _save(fig, out)


def _split_network_inputs(inputs: tuple[str, ...]) -> tuple[str, str]:
    geo = [p for p in inputs if p.endswith((".geojson", ".json"))]
    other = [p for p in inputs if p not in geo]
    if len(geo) != 1 or len(other) != 1:
        raise VizError(
            "flow_network takes two --in files: the tiles GeoJSON and the edges CSV"
        )
    return geo[0], other[0]


def select_edges(rows: list[tuple[int, int, float]], focus: int | None):
    """Drawable edges, sorted; with a focus only its outgoing edges remain."""
    kept = [
        (i, j, f) for i, j, f in rows
        if i != j and (focus is None or i == focus)
    ]
    return sorted(kept)


def render_flow_network(inputs, out, focus) -> str:
    geo_path, edge_path = _split_network_inputs(inputs)
    feats = read_features(geo_path, NETWORK_PROPS)
    table = read_table(edge_path, EDGE_SCHEMA)
    ids = [int(f["properties"]["id"]) for f in feats]
    if focus is not None and focus not in ids:
        raise VizError(f"tile id {focus} not in {geo_path} (ids {ids[0]}..{ids[-1]})")
    xy = {
        int(f["properties"]["id"]): (
            float(f["properties"]["centroid_lon"]),
            float(f["properties"]["centroid_lat"]),
        )
        for f in feats
    }
    inflow = np.array([float(f["properties"]["inflow_pred"]) for f in feats])
    rows = list(zip(ints(table["origin"]), ints(table["destination"]),
                    floats(table["flow"])))
    for i, j, _ in rows:
        if i not in xy or j not in xy:
            raise VizError(f"{edge_path}: edge {i}->{j} names a tile missing from {geo_path}")
    edges = select_edges(rows, focus)

    fig, ax = plt.subplots(figsize=(7, 6))
    for feat in feats:
        geom = feat.get("geometry") or {}
        if geom.get("type") == "Polygon" and geom.get("coordinates"):
            ring = _rings(feat)
            ax.plot(ring[:, 0], ring[:, 1], color="0.85", linewidth=0.8, zorder=1)
    if edges:
        flows = np.array([f for _, _, f in edges])
        widths = 0.6 + 4.4 * flows / flows.max()
        segments = [(xy[i], xy[j]) for i, j, _ in edges]
        ax.add_collection(LineCollection(segments, linewidths=widths, colors="C0",
                                         alpha=0.7, zorder=2))
    sizes = 40 + 260 * inflow / inflow.max() if inflow.max() > 0 else np.full(len(ids), 40.0)
    pts = np.array([xy[i] for i in ids])
    ax.scatter(pts[:, 0], pts[:, 1], s=sizes, color="C1", edgecolor="black",
               linewidth=0.6, zorder=3)
    for idx, (px, py) in zip(ids, pts):
        ax.annotate(str(idx), (px, py), fontsize=8, ha="center", va="center", zorder=4)
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    scope = f"outgoing flows of tile {focus}" if focus is not None else "predicted flows"
    ax.set_title(f"flow network ({scope}); edge width ~ flow, node size ~ inflow")
    ax.set_aspect("equal")
    ax.autoscale_view()
    fig.tight_layout()
    return _save(fig, out)


def _header(path: str) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        try:
            return next(csv.reader(fh))
        except StopIteration:
            return []


def render_metric_curve(inputs, out, focus) -> str:
    _no_focus("metric_curve", focus)
    path = _one_input("metric_curve", inputs)
    from .io import require_file

    require_file(path)
    header = set(_header(path))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if set(IMPORTANCE_SCHEMA) <= header:
        table = read_table(path, IMPORTANCE_SCHEMA)
        pairs = sorted(
            (int(k), float(r))
            for k, r, status in zip(table["k"], table["rmse"], table["status"])
            if status == "ok"
        )
        if not pairs:
            raise VizError(f"{path}: no usable rows (every history length was skipped)")
        ks, rmses = zip(*pairs)
        ax.plot(ks, rmses, marker="o", color="C0")
        skipped = sum(1 for s in table["status"] if s != "ok")
        suffix = f" ({skipped} skipped)" if skipped else ""
        ax.set_xlabel("history length k")
        ax.set_ylabel("RMSE")
        ax.set_title(f"forecast error vs history length{suffix}")
    elif set(REPORT_SCHEMA) <= header:
        table = read_table(path, REPORT_SCHEMA)
        # cells that failed carry an error string; degenerate cells succeed
        # but leave the ratio metric blank — neither belongs on the curve
        ok = [
            idx for idx, err in enumerate(table["error"])
            if not err and table["nrmse"][idx] != ""
        ]
        if not ok:
            raise VizError(f"{path}: no usable rows (every sweep cell failed "
                           "or had no ratio metric)")
        bins = [float(table["bin_minutes"][i]) for i in ok]
        tiles = [float(table["tile_size_m"][i]) for i in ok]
        on_bins = len(set(bins)) > 1 or len(set(tiles)) == 1
        xs = bins if on_bins else tiles
        both_vary = len(set(bins)) > 1 and len(set(tiles)) > 1
        series: dict[str, list[tuple[float, float]]] = {}
        for x, i in zip(xs, ok):
            label = table["model_name"][i]
            if both_vary:
                label += f" @ {table['tile_size_m'][i]} m"
            series.setdefault(label, []).append((x, float(table["nrmse"][i])))
        for label in sorted(series):
            pts = sorted(series[label])
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
        ax.set_xlabel("bin width (minutes)" if on_bins else "tile size (m)")
        ax.set_ylabel("NRMSE")
        ax.set_title("forecast error across the sweep")
        ax.legend()
    else:
        plt.close(fig)
        raise VizError(
            f"{path}: columns match neither the sweep report schema "
            f"({', '.join(REPORT_SCHEMA)}) nor the history-length curve schema "
            f"({', '.join(IMPORTANCE_SCHEMA)})"
        )
    fig.tight_layout()
    return _save(fig, out)
