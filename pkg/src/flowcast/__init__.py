"""Crowd-flow forecasting: trips or GPS traces to per-tile flow predictions.

The pipeline tessellates an area into tiles, bins movement records into
origin-destination count tensors, and fits a gated spatio-temporal graph
convolution network next to naive and vector-autoregression baselines.
"""

from .autodiff import (
    RMSprop,
    ShapeError,
    Tensor,
    backward,
    load_checkpoint,
    no_grad,
    save_checkpoint,
)
from .baselines import BaselineError, VarModel, naive_predict, var_fit, var_predict
from .geo import (
    BoundingBox,
    GeoPoint,
    TessellationError,
    Tessellation,
    Tile,
    bbox_from_meters,
    build_square_grid,
    load_irregular,
    load_irregular_geojson,
    project_local,
    unproject_local,
)
from .metrics import MetricError, cpc, nrmse, rmse
from .model import (
    ConfigError,
    CrowdNet,
    ModelConfig,
    NormalizedAdjacency,
    adjacency_fingerprint,
    aggregate_to_crowd,
    normalize_adjacency,
    train_model,
)
from .pipeline import (
    Adjacency,
    CrowdSeries,
    GpsTrace,
    IngestStats,
    ODSeries,
    PipelineError,
    SplitRanges,
    TimeBinning,
    TripRecord,
    adjacency_from_od,
    crowd_from_od,
    load_od,
    make_windows,
    od_from_gps,
    od_from_trips,
    save_od,
    split_series,
)

__version__ = "0.1.0"

__all__ = [
    "Adjacency",
    "BaselineError",
    "BoundingBox",
    "ConfigError",
    "CrowdNet",
    "CrowdSeries",
    "GeoPoint",
    "GpsTrace",
    "IngestStats",
    "MetricError",
    "ModelConfig",
    "NormalizedAdjacency",
    "ODSeries",
    "PipelineError",
    "RMSprop",
    "ShapeError",
    "SplitRanges",
    "Tensor",
    "TessellationError",
    "Tessellation",
    "Tile",
    "TimeBinning",
    "TripRecord",
    "VarModel",
    "adjacency_fingerprint",
    "adjacency_from_od",
    "aggregate_to_crowd",
    "backward",
    "bbox_from_meters",
    "build_square_grid",
    "cpc",
    "crowd_from_od",
    "load_checkpoint",
    "load_irregular",
    "load_irregular_geojson",
    "load_od",
    "make_windows",
    "naive_predict",
    "no_grad",
    "normalize_adjacency",
    "nrmse",
    "od_from_gps",
    "od_from_trips",
    "project_local",
    "rmse",
    "save_checkpoint",
    "save_od",
    "split_series",
    "train_model",
    "unproject_local",
    "var_fit",
    "var_predict",
    "__version__",
]
