"""Shared fixtures: small tessellations, synthetic data, CSV writers."""

from __future__ import annotations

import csv
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from flowcast.geo import GeoPoint, bbox_from_meters, build_square_grid, load_irregular

START = datetime(2024, 3, 1, tzinfo=timezone.utc)

# five mixed convex polygons (two squares, a wide rectangle, a triangle,
# a pentagon) with pairwise disjoint interiors; some share edges
FIVE_RINGS = [
    [(0.0, 0.0), (0.01, 0.0), (0.01, 0.01), (0.0, 0.01)],
    [(0.01, 0.0), (0.025, 0.0), (0.025, 0.01), (0.01, 0.01)],
    [(0.0, 0.01), (0.01, 0.01), (0.005, 0.02)],
    [(0.012, 0.012), (0.025, 0.011), (0.028, 0.018), (0.02, 0.023), (0.013, 0.019)],
    [(-0.012, 0.012), (-0.001, 0.013), (-0.002, 0.022), (-0.012, 0.021)],
]


@pytest.fixture
def grid6():
    """2 rows x 3 cols of 1 km tiles around the null island meridian."""
    return build_square_grid(bbox_from_meters(GeoPoint(0.0, 0.0), 3000.0, 2000.0), 1000.0)


@pytest.fixture
def five_rings():
    return [np.asarray(r, dtype=np.float64) for r in FIVE_RINGS]


@pytest.fixture
def tess5(five_rings):
    return load_irregular(five_rings)


def ts(hours: float) -> datetime:
    return START + timedelta(hours=hours)


def write_trips_csv(path, rows, header=None):
    header = header or ["start_time", "end_time", "start_lat", "start_lon", "end_lat", "end_lon"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_gps_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "timestamp", "lat", "lon"])
        writer.writerows(rows)


def _ring_pairs(n):
    return [(i, (i + 1) % n) for i in range(n)] + [(i, (i - 1) % n) for i in range(n)]


def _ring_adjacency(n):
    adjacency = np.zeros((n, n), dtype=np.uint8)
    for i, j in _ring_pairs(n):
        adjacency[i, j] = 1
    return adjacency


def periodic_flow_series(n=4, period=24, periods=30, noise=0.1, seed=0):
    """Daily Gaussian flow pulses on a ring graph with per-day phase jitter.

    Each directed ring pair gets one pulse per day whose center shifts by a
    fresh uniform offset in [-2.5, 2.5] hours each day. The shifting makes
    one-step prediction a nonlinear problem: a single linear map over lagged
    values cannot track the moving pulse across all phases at once. Additive
    Gaussian noise is applied to every cell; off-ring pairs carry only noise,
    so the returned adjacency (the ring) is the data's true graph.
    """
    rng = np.random.default_rng(seed)
    t = period * periods
    hours = np.arange(t) % period
    day = np.arange(t) // period
    series = np.zeros((t, n, n))
    for i, j in _ring_pairs(n):
        center = rng.uniform(0, period)
        width = rng.uniform(1.0, 1.8)
        amp = rng.uniform(3.0, 6.0)
        jitter = rng.uniform(-2.5, 2.5, size=periods)[day]
        d = np.abs(hours - (center + jitter))
        d = np.minimum(d, period - d)
        series[:, i, j] = amp * np.exp(-0.5 * (d / width) ** 2)
    series += noise * rng.standard_normal(series.shape)
    series[:, np.arange(n), np.arange(n)] = 0.0
    return series, _ring_adjacency(n)


def pulse_echo_series(n=4, period=24, periods=15, noise=0.1, seed=0, echo_lag=10):
    """Ring-graph pulse pairs: a morning pulse and an echo echo_lag hours
    later, both scaled by the same fresh per-day factor.

    The factor is only observable once the first pulse has appeared, so a
    forecaster whose history window spans the gap can size the echo while a
    shorter window cannot — longer histories are structurally better here.
    """
    rng = np.random.default_rng(seed)
    t = period * periods
    hours = np.arange(t) % period
    day = np.arange(t) // period
    series = np.zeros((t, n, n))
    for i, j in _ring_pairs(n):
        center = rng.uniform(3.0, 7.0)
        width = 1.3
        amp = rng.uniform(4.0, 6.0)
        factors = rng.uniform(0.5, 1.5, size=periods)[day]
        for c in (center, center + echo_lag):
            d = np.abs(hours - c)
            d = np.minimum(d, period - d)
            series[:, i, j] += amp * factors * np.exp(-0.5 * (d / width) ** 2)
    series += noise * rng.standard_normal(series.shape)
    series[:, np.arange(n), np.arange(n)] = 0.0
    return series, _ring_adjacency(n)
