"""Numeric kernel dispatch.

The temporal-convolution and point-in-ring inner loops dominate training and
ingestion time, so each exists twice: a Cython extension (``_ckern``) and a
vectorized NumPy implementation (``_npk``). Routing is fixed once at import,
per kernel, to whichever implementation measures faster
(``benchmarks/bench_kernels.py``): the geometry test wins compiled by an
order of magnitude, while the convolutions win on the NumPy side because its
sliding-window path runs through BLAS. ``FLOWCAST_PURE_PYTHON=1`` forces
everything onto the NumPy implementation; ``BACKEND`` reports whether the
extension is in use.
"""

from __future__ import annotations

import os

import numpy as np

from . import _npk

_conv = _npk
_geom = _npk
BACKEND = "numpy"
if os.environ.get("FLOWCAST_PURE_PYTHON", "0") in ("", "0"):
    try:
        from . import _ckern

        _geom = _ckern
        BACKEND = "compiled"
    except ImportError:
        pass


def _f64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _conv.conv1d_forward(_f64(x), _f64(w), _f64(b))


def conv1d_grad_input(g: np.ndarray, w: np.ndarray, t_in: int) -> np.ndarray:
    return _conv.conv1d_grad_input(_f64(g), _f64(w), t_in)


def conv1d_grad_weights(x: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _conv.conv1d_grad_weights(_f64(x), _f64(g))


def points_in_ring(ring: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = _f64(np.atleast_2d(pts))
    return _geom.points_in_ring(_f64(ring), pts)


def backends() -> dict[str, object]:
    """Both implementations, keyed by name (used by tests and benchmarks)."""
    out: dict[str, object] = {"numpy": _npk}
    try:
        from . import _ckern

        out["compiled"] = _ckern
    except ImportError:
        pass
    return out
