"""Offline plotting for flowcast exports.

The boundary between this package and the forecaster is files: every plot
reads only the documented CSV/GeoJSON exports (``flowcast export``,
``flowcast sweep``) and writes a raster image. One console script exists per
plot kind (``flowviz-heatmap``, ``flowviz-timeseries``, ``flowviz-od-matrix``,
``flowviz-flow-network``, ``flowviz-metric-curve``), all with the same flags:
``--in`` (one or two input files), ``--out`` (image path), and an optional
``--focus-node`` (tile id).
"""

from __future__ import annotations

from dataclasses import dataclass

from .io import VizError
from .plots import (
    render_flow_network,
    render_heatmap,
    render_metric_curve,
    render_od_matrix,
    render_timeseries,
)

KINDS = ("heatmap", "timeseries", "od_matrix", "flow_network", "metric_curve")

_RENDERERS = {
    "heatmap": render_heatmap,
    "timeseries": render_timeseries,
    "od_matrix": render_od_matrix,
    "flow_network": render_flow_network,
    "metric_curve": render_metric_curve,
}


@dataclass(frozen=True)
class PlotSpec:
    """One plot request: what to draw, from which files, to which image."""

    kind: str
    inputs: tuple[str, ...]
    out: str
    focus_node: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise VizError(f"unknown plot kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if not self.inputs:
            raise VizError("at least one --in file is required")
        if not self.out:
            raise VizError("--out image path is required")


def plot(spec: PlotSpec) -> str:
    """Render ``spec`` and return the written image path."""
    return _RENDERERS[spec.kind](tuple(spec.inputs), spec.out, spec.focus_node)


__all__ = ["KINDS", "PlotSpec", "VizError", "plot"]
