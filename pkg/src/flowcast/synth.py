"""Synthetic mobility generators for experiments and tests.

Three families:

* ``periodic_flow_series``: float OD tensors with daily pulse profiles
  per origin-destination pair. Pulse centers are spread across pairs,
  each day rescales every pair independently, and Gaussian noise is
  added then clipped at zero. The day-to-day rescaling makes the clean
  signal a product of a latent factor and a phase profile, which a
  fixed-coefficient linear forecaster cannot represent exactly, while
  gated convolutions can.
* ``synthetic_trips``: trip records between tile centers with an
  hour-of-day intensity profile, for ingestion-level tests and sweeps.
* ``trajectory_population``: per-individual tile occupancy sequences
  plus their GPS-trace rendering, the ground truth for flow-counting
  oracles.
"""

from __future__ import annotations

from datetime import timedelta

import numpy as np

from .geo import Tessellation
from .pipeline import GpsTrace, ODSeries, TimeBinning, TripRecord


def periodic_flow_series(
    n: int = 4,
    period: int = 24,
    n_periods: int = 30,
    noise: float = 0.1,
    seed: int = 0,
    amp_low: float = 4.0,
    amp_high: float = 10.0,
    pulse_width: float = 1.1,
    base: float = 0.5,
    day_factor_low: float = 0.6,
    day_factor_high: float = 1.4,
) -> np.ndarray:
    """Float OD series of shape (period*n_periods, n, n), all entries >= 0."""
    rng = np.random.default_rng(seed)
    t_bins = period * n_periods
    i_idx, j_idx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    centers = (5 * i_idx + 7 * j_idx) % period
    amplitude = rng.uniform(amp_low, amp_high, size=(n, n))
    day_factor = rng.uniform(day_factor_low, day_factor_high, size=(n_periods, n, n))
    phase = np.arange(t_bins) % period
    # circular distance from each bin's phase to each pair's pulse center
    diff = np.abs(phase[:, None, None] - centers[None, :, :])
    dist = np.minimum(diff, period - diff)
    profile = np.exp(-(dist**2) / (2.0 * pulse_width**2))
    clean = base + day_factor[np.arange(t_bins) // period] * amplitude[None, :, :] * profile
    series = clean + rng.normal(0.0, noise, size=clean.shape)
    return np.clip(series, 0.0, None)


def quantized_od_from_series(
    series: np.ndarray, binning: TimeBinning, tessellation_ref: str = ""
) -> ODSeries:
    """Round a non-negative float series to integer counts."""
    data = np.rint(np.clip(series, 0.0, None)).astype(np.int64)
    t, n, _ = data.shape
    return ODSeries(n, t, data, binning, tessellation_ref)


def _hourly_rate(hour: int) -> float:
    # double-peaked day: quiet nights, morning and evening maxima
    morning = np.exp(-((hour - 8.5) ** 2) / (2 * 2.0**2))
    evening = np.exp(-((hour - 17.5) ** 2) / (2 * 2.5**2))
    return 0.15 + morning + 0.9 * evening


def synthetic_trips(
    tess: Tessellation,
    start,
    days: int,
    trips_per_hour: float = 40.0,
    seed: int = 0,
    duration_minutes: float = 12.0,
) -> list[TripRecord]:
    """Trips between tile centers, Poisson counts with an hour-of-day profile.

    Pair weights are fixed per seed, so some origin-destination links
    dominate and the induced adjacency is sparse.
    """
    rng = np.random.default_rng(seed)
    n = tess.n
    centers = [t.centroid() for t in tess.tiles]
    weights = rng.gamma(0.5, size=(n, n))
    np.fill_diagonal(weights, weights.diagonal() * 0.2)
    weights /= weights.sum()
    flat = weights.reshape(-1)
    trips: list[TripRecord] = []
    for day in range(days):
        for hour in range(24):
            count = rng.poisson(trips_per_hour * _hourly_rate(hour))
            if count == 0:
                continue
            pairs = rng.choice(n * n, size=count, p=flat)
            offsets = np.sort(rng.uniform(0.0, 3600.0, size=count))
            for pair, off in zip(pairs, offsets):
                o, d = divmod(int(pair), n)
                t0 = start + timedelta(days=day, hours=hour, seconds=float(off))
                trips.append(
                    TripRecord(
                        start_time=t0,
                        end_time=t0 + timedelta(minutes=duration_minutes),
                        start=centers[o],
                        end=centers[d],
                    )
                )
    return trips


def trajectory_population(
    n_tiles: int, t_bins: int, n_individuals: int, seed: int = 0, move_prob: float = 0.6
) -> np.ndarray:
    """Tile occupancy per (individual, bin); individuals hop uniformly."""
    rng = np.random.default_rng(seed)
    occ = np.empty((n_individuals, t_bins), dtype=np.int64)
    occ[:, 0] = rng.integers(0, n_tiles, size=n_individuals)
    for t in range(1, t_bins):
        stay = rng.random(n_individuals) >= move_prob
        jump = rng.integers(0, n_tiles, size=n_individuals)
        occ[:, t] = np.where(stay, occ[:, t - 1], jump)
    return occ


def traces_from_occupancy(
    occupancy: np.ndarray, tess: Tessellation, binning: TimeBinning
) -> list[GpsTrace]:
    """One fix per bin at the occupied tile's center."""
    centers = [t.centroid() for t in tess.tiles]
    epoch = binning.epoch_start
    step = timedelta(minutes=binning.bin_minutes)
    traces = []
    for ind in range(occupancy.shape[0]):
        points = []
        for b in range(occupancy.shape[1]):
            ts = epoch + b * step + timedelta(seconds=30)
            points.append((ts, centers[int(occupancy[ind, b])]))
        traces.append(GpsTrace(subject_id=f"subj{ind:03d}", points=tuple(points)))
    return traces
