"""Vectorized NumPy implementations of the hot kernels.

These mirror the compiled routines in ``_ckern`` and serve as the fallback
backend when the extension is unavailable (or disabled via
``FLOWCAST_PURE_PYTHON=1``).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid convolution along the time axis, shared across the node axis.

    x: (batch, c_in, t, nodes), w: (c_out, c_in, k), b: (c_out,)
    returns (batch, c_out, t - k + 1, nodes).
    """
    k = w.shape[2]
    win = sliding_window_view(x, k, axis=2)  # (B, Ci, To, N, K)
    out = np.einsum("bctnk,ock->botn", win, w, optimize=True)
    out += b[None, :, None, None]
    return out


def conv1d_grad_input(g: np.ndarray, w: np.ndarray, t_in: int) -> np.ndarray:
    """Gradient of conv1d_forward w.r.t. its input.

    g: (batch, c_out, t_out, nodes); returns (batch, c_in, t_in, nodes).
    """
    k = w.shape[2]
    gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (0, 0)))
    win = sliding_window_view(gp, k, axis=2)  # (B, Co, T_in, N, K)
    w_flip = np.ascontiguousarray(w[:, :, ::-1])
    gx = np.einsum("botnk,ock->bctn", win, w_flip, optimize=True)
    assert gx.shape[2] == t_in
    return gx


def conv1d_grad_weights(x: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of conv1d_forward w.r.t. kernel and bias."""
    k = x.shape[2] - g.shape[2] + 1
    win = sliding_window_view(x, k, axis=2)  # (B, Ci, To, N, K)
    gw = np.einsum("bctnk,botn->ock", win, g, optimize=True)
    gb = g.sum(axis=(0, 2, 3))
    return gw, gb


def points_in_ring(ring: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd containment test of many points against one closed ring.

    ring: (v, 2) with ring[0] == ring[-1]; pts: (m, 2). Points exactly on an
    edge count as inside. Returns a boolean (m,) array.
    """
    x1 = ring[:-1, 0][None, :]
    y1 = ring[:-1, 1][None, :]
    x2 = ring[1:, 0][None, :]
    y2 = ring[1:, 1][None, :]
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]

    cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    on_edge = (
        (cross == 0.0)
        & (px >= np.minimum(x1, x2))
        & (px <= np.maximum(x1, x2))
        & (py >= np.minimum(y1, y2))
        & (py <= np.maximum(y1, y2))
    ).any(axis=1)

    straddles = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_int = (x2 - x1) * (py - y1) / (y2 - y1) + x1
    crossings = (straddles & (px < x_int)).sum(axis=1)
    return (crossings % 2 == 1) | on_edge
