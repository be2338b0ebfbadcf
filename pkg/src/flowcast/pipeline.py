"""From raw mobility records to time-binned origin-destination tensors.

Covers trip and GPS ingestion, per-tile inflow/outflow aggregation,
adjacency construction, chronological splitting, sliding windows, CSV
parsing, and the on-disk tensor format.

Conventions: a trip contributes to the bin of its start time; a GPS
transition between consecutive occupied bins is recorded at the arrival
bin. Inflow and outflow at bin t therefore both read off the same OD
slice: inflow[t,k] sums arrivals into k, outflow[t,k] sums departures
from k observed in that bin.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .geo import GeoPoint, Tessellation


class PipelineError(ValueError):
    """Invalid pipeline input (empty data, bad ranges, malformed files)."""


def _utc(ts: datetime) -> datetime:
    return ts.replace(tzinfo=timezone.utc) if ts.tzinfo is None else ts.astimezone(timezone.utc)


def parse_timestamp(text: str) -> datetime:
    """ISO-8601 timestamp; naive values are taken as UTC."""
    return _utc(datetime.fromisoformat(text.strip().replace("Z", "+00:00")))


@dataclass(frozen=True)
class TripRecord:
    start_time: datetime
    end_time: datetime
    start: GeoPoint
    end: GeoPoint
    subject_id: str | None = None

    def __post_init__(self):
        if _utc(self.start_time) > _utc(self.end_time):
            raise PipelineError(f"trip start {self.start_time} after end {self.end_time}")


@dataclass(frozen=True)
class GpsTrace:
    subject_id: str
    points: tuple  # of (datetime, GeoPoint), strictly increasing timestamps

    def __post_init__(self):
        ts = [_utc(t) for t, _ in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise PipelineError(f"trace {self.subject_id}: timestamps must strictly increase")


@dataclass(frozen=True)
class TimeBinning:
    epoch_start: datetime
    bin_minutes: int

    def __post_init__(self):
        if self.bin_minutes <= 0:
            raise PipelineError(f"bin_minutes must be positive, got {self.bin_minutes}")

    def bin_index(self, ts: datetime) -> int:
        delta = _utc(ts) - _utc(self.epoch_start)
        return int(delta.total_seconds() // (self.bin_minutes * 60))


@dataclass
class ODSeries:
    """Integer flow tensor indexed (time bin, origin tile, destination tile)."""

    n: int
    t_bins: int
    data: np.ndarray  # int64, shape (t_bins, n, n), entries >= 0
    binning: TimeBinning
    tessellation_ref: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.int64)
        if self.data.shape != (self.t_bins, self.n, self.n):
            raise PipelineError(f"OD tensor shape {self.data.shape} != ({self.t_bins}, {self.n}, {self.n})")
        if self.data.min(initial=0) < 0:
            raise PipelineError("OD tensor has negative entries")


@dataclass
class CrowdSeries:
    """Per (time bin, tile) inflow/outflow counts."""

    n: int
    t_bins: int
    inflow: np.ndarray  # int64 (t_bins, n)
    outflow: np.ndarray


@dataclass
class Adjacency:
    n: int
    a: np.ndarray  # uint8 (n, n), entries in {0, 1}

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.uint8)
        if self.a.shape != (self.n, self.n):
            raise PipelineError(f"adjacency shape {self.a.shape} != ({self.n}, {self.n})")
        if not np.isin(self.a, (0, 1)).all():
            raise PipelineError("adjacency entries must be 0 or 1")


@dataclass
class IngestStats:
    total: int = 0
    kept: int = 0
    dropped_unlocatable: int = 0
    dropped_before_epoch: int = 0

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "kept": self.kept,
            "dropped_unlocatable": self.dropped_unlocatable,
            "dropped_before_epoch": self.dropped_before_epoch,
        }


def default_epoch(timestamps) -> datetime:
    """Midnight UTC of the earliest timestamp's day."""
    first = min(_utc(t) for t in timestamps)
    return first.replace(hour=0, minute=0, second=0, microsecond=0)


def od_from_trips(
    trips: list[TripRecord], tess: Tessellation, binning: TimeBinning
) -> tuple[ODSeries, IngestStats]:
    """Count each locatable trip at (bin of start time, start tile, end tile).

    Trips with an endpoint outside every tile, or starting before the
    binning epoch, are dropped and counted in the returned stats.
    """
    if not trips:
        raise PipelineError("no trips given")
    if tess.n < 1:
        raise PipelineError("tessellation has no tiles")
    stats = IngestStats(total=len(trips))
    start_ids = tess.locate_many(
        np.array([t.start.lon for t in trips]), np.array([t.start.lat for t in trips])
    )
    end_ids = tess.locate_many(
        np.array([t.end.lon for t in trips]), np.array([t.end.lat for t in trips])
    )
    bins = np.array([binning.bin_index(t.start_time) for t in trips], dtype=np.int64)
    unlocatable = (start_ids < 0) | (end_ids < 0)
    early = (~unlocatable) & (bins < 0)
    keep = ~(unlocatable | early)
    stats.dropped_unlocatable = int(unlocatable.sum())
    stats.dropped_before_epoch = int(early.sum())
    stats.kept = int(keep.sum())
    if stats.kept == 0:
        raise PipelineError("all trips were dropped (unlocatable endpoints or before epoch)")
    bins, start_ids, end_ids = bins[keep], start_ids[keep], end_ids[keep]
    t_bins = int(bins.max()) + 1
    data = np.zeros((t_bins, tess.n, tess.n), dtype=np.int64)
    np.add.at(data, (bins, start_ids, end_ids), 1)
    od = ODSeries(tess.n, t_bins, data, binning)
    return od, stats


def od_from_gps(
    traces: list[GpsTrace], tess: Tessellation, binning: TimeBinning
) -> tuple[ODSeries, IngestStats]:
    """Per-subject bin occupancy (last fix in each bin) drives transitions.

    A transition u -> v is recorded at the arrival bin whenever two
    consecutive bins are both occupied and the tiles differ. Bins without
    a fix carry no occupancy, so no transition spans a gap.
    """
    if not traces:
        raise PipelineError("no traces given")
    if tess.n < 1:
        raise PipelineError("tessellation has no tiles")
    stats = IngestStats()
    occupancy: list[dict[int, int]] = []
    max_bin = -1
    for trace in traces:
        last_in_bin: dict[int, tuple[float, float]] = {}
        for ts, p in trace.points:
            stats.total += 1
            b = binning.bin_index(ts)
            if b < 0:
                stats.dropped_before_epoch += 1
                continue
            last_in_bin[b] = (p.lon, p.lat)  # points are time-ordered
            max_bin = max(max_bin, b)
        if not last_in_bin:
            occupancy.append({})
            continue
        bins = sorted(last_in_bin)
        lons = np.array([last_in_bin[b][0] for b in bins])
        lats = np.array([last_in_bin[b][1] for b in bins])
        ids = tess.locate_many(lons, lats)
        occ = {}
        for b, tile in zip(bins, ids):
            if tile < 0:
                stats.dropped_unlocatable += 1
            else:
                occ[b] = int(tile)
        occupancy.append(occ)
    located = sum(len(o) for o in occupancy)
    if located == 0:
        raise PipelineError("no GPS point falls inside the tessellation")
    stats.kept = located
    t_bins = max_bin + 1
    data = np.zeros((t_bins, tess.n, tess.n), dtype=np.int64)
    for occ in occupancy:
        for b, v in occ.items():
            u = occ.get(b - 1)
            if u is not None and u != v:
                data[b, u, v] += 1
    od = ODSeries(tess.n, t_bins, data, binning)
    return od, stats


def crowd_from_od(od: ODSeries, include_self: bool = False) -> CrowdSeries:
    """Per-tile arrivals and departures read off each OD slice."""
    data = od.data
    inflow = data.sum(axis=1)
    outflow = data.sum(axis=2)
    if not include_self:
        diag = np.einsum("tii->ti", data)
        inflow = inflow - diag
        outflow = outflow - diag
    return CrowdSeries(od.n, od.t_bins, inflow, outflow)


def adjacency_from_od(od: ODSeries, bins: range) -> Adjacency:
    """Directed link i -> j iff any flow i -> j occurs inside ``bins``."""
    if len(bins) == 0:
        raise PipelineError("adjacency bin range is empty")
    if bins.start < 0 or bins.stop > od.t_bins:
        raise PipelineError(f"bin range {bins} outside series [0, {od.t_bins})")
    total = od.data[bins.start : bins.stop].sum(axis=0)
    return Adjacency(od.n, (total > 0).astype(np.uint8))


@dataclass(frozen=True)
class SplitRanges:
    train: range
    val: range
    test: range


def split_series(od: ODSeries, test_days: int, val_fraction: float = 0.2) -> SplitRanges:
    """Chronological split: test = final test_days, then val_fraction of the rest.

    Ranges are contiguous, disjoint, and exhaustive over [0, t_bins).
    """
    if test_days < 1:
        raise PipelineError(f"test_days must be >= 1, got {test_days}")
    if not 0.0 <= val_fraction < 1.0:
        raise PipelineError(f"val_fraction must be in [0, 1), got {val_fraction}")
    test_bins = round(test_days * 1440 / od.binning.bin_minutes)
    min_len = test_bins + 1  # at least one development bin
    if od.t_bins < min_len:
        raise PipelineError(
            f"series has {od.t_bins} bins; need at least {min_len} "
            f"({test_bins} test bins plus one development bin)"
        )
    dev = od.t_bins - test_bins
    val_bins = int(dev * val_fraction)
    train = range(0, dev - val_bins)
    val = range(dev - val_bins, dev)
    test = range(dev, od.t_bins)
    return SplitRanges(train, val, test)


def make_windows(od, bins: range, k: int, l: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stride-1 sliding (history, target) windows, strictly inside ``bins``.

    Accepts an ODSeries or a plain (t, ...) float array. Returns float64
    copies: X has k leading steps, Y the next l.
    """
    if k < 1:
        raise PipelineError(f"history length k must be >= 1, got {k}")
    if l < 1:
        raise PipelineError(f"horizon l must be >= 1, got {l}")
    data = od.data if isinstance(od, ODSeries) else np.asarray(od)
    if bins.start < 0 or bins.stop > data.shape[0]:
        raise PipelineError(f"bin range {bins} outside series [0, {data.shape[0]})")
    count = len(bins) - k - l + 1
    if count < 1:
        raise PipelineError(f"range of {len(bins)} bins too short for k={k}, l={l} windows")
    out = []
    for s in range(bins.start, bins.start + count):
        x = data[s : s + k].astype(np.float64)
        y = data[s + k : s + k + l].astype(np.float64)
        out.append((x, y))
    return out


# ---------------------------------------------------------------------------
# binary OD format: magic "ODS1", little-endian u32 n, u32 t_bins,
# i64 epoch_start (unix seconds), u32 bin_minutes, then t_bins*n*n u32
# values row-major.

OD_MAGIC = b"ODS1"


def save_od(od: ODSeries, path: str) -> None:
    if od.data.max(initial=0) >= 2**32:
        raise PipelineError("OD entry too large for the u32 file format")
    epoch_s = int(_utc(od.binning.epoch_start).timestamp())
    with open(path, "wb") as fh:
        fh.write(OD_MAGIC)
        fh.write(struct.pack("<IIqI", od.n, od.t_bins, epoch_s, od.binning.bin_minutes))
        fh.write(od.data.astype("<u4").tobytes(order="C"))


def load_od(path: str, tessellation_ref: str = "") -> ODSeries:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != OD_MAGIC:
            raise PipelineError(f"{path}: not an OD series file (bad magic {magic!r})")
        n, t_bins, epoch_s, bin_minutes = struct.unpack("<IIqI", fh.read(20))
        payload = fh.read(4 * t_bins * n * n)
        if len(payload) < 4 * t_bins * n * n:
            raise PipelineError(f"{path}: truncated OD payload")
        data = np.frombuffer(payload, dtype="<u4").reshape(t_bins, n, n).astype(np.int64)
    binning = TimeBinning(datetime.fromtimestamp(epoch_s, tz=timezone.utc), bin_minutes)
    return ODSeries(n, t_bins, data, binning, tessellation_ref)


# ---------------------------------------------------------------------------
# CSV interfaces
# trips: start_time, end_time, start_lat, start_lon, end_lat, end_lon [, subject_id]
# gps:   subject_id, timestamp, lat, lon

@dataclass
class ParsedCsv:
    rows_total: int = 0
    malformed: list = field(default_factory=list)  # (row number, reason)


def parse_trips_csv(path: str) -> tuple[list[TripRecord], ParsedCsv]:
    trips: list[TripRecord] = []
    info = ParsedCsv()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"start_time", "end_time", "start_lat", "start_lon", "end_lat", "end_lon"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise PipelineError(f"{path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):  # header is row 1
            info.rows_total += 1
            try:
                trips.append(
                    TripRecord(
                        start_time=parse_timestamp(row["start_time"]),
                        end_time=parse_timestamp(row["end_time"]),
                        start=GeoPoint(float(row["start_lon"]), float(row["start_lat"])),
                        end=GeoPoint(float(row["end_lon"]), float(row["end_lat"])),
                        subject_id=row.get("subject_id") or None,
                    )
                )
            except (ValueError, TypeError, KeyError) as exc:
                info.malformed.append((row_no, str(exc)))
    return trips, info


def parse_gps_csv(path: str) -> tuple[list[GpsTrace], ParsedCsv]:
    """Rows grouped by subject; per subject, fixes are sorted by timestamp
    and duplicate timestamps keep the last row seen."""
    info = ParsedCsv()
    by_subject: dict[str, dict[datetime, GeoPoint]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"subject_id", "timestamp", "lat", "lon"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise PipelineError(f"{path}: missing columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            info.rows_total += 1
            try:
                sid = row["subject_id"]
                if not sid:
                    raise ValueError("empty subject_id")
                ts = parse_timestamp(row["timestamp"])
                p = GeoPoint(float(row["lon"]), float(row["lat"]))
            except (ValueError, TypeError, KeyError) as exc:
                info.malformed.append((row_no, str(exc)))
                continue
            by_subject.setdefault(sid, {})[ts] = p
    traces = [
        GpsTrace(sid, tuple(sorted(points.items())))
        for sid, points in sorted(by_subject.items())
    ]
    return traces, info
