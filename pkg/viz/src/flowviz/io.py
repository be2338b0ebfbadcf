"""Input readers. Plots are read-only consumers of documented export files."""

from __future__ import annotations

import csv
import json
import os
from typing import Sequence


class VizError(Exception):
    """Bad plot request or unusable input file."""


def require_file(path: str) -> None:
    if not os.path.isfile(path):
        raise VizError(f"{path}: no such input file")


def read_table(path: str, required: Sequence[str]) -> dict[str, list[str]]:
    """Read a CSV into columns, enforcing the expected header.

    Raises :class:`VizError` naming the missing columns and the full expected
    schema, so a wrong file is diagnosed from the message alone.
    """
    require_file(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = sorted(set(required) - set(fields))
        if missing:
            raise VizError(
                f"{path}: missing columns: {', '.join(missing)}; "
                f"expected schema: {', '.join(required)}"
            )
        rows = list(reader)
    return {name: [row[name] for row in rows] for name in fields}


def floats(column: list[str]) -> list[float]:
    return [float(v) for v in column]


def ints(column: list[str]) -> list[int]:
    return [int(v) for v in column]


def read_features(
    path: str, required_props: Sequence[str], need_geometry: bool = False
) -> list[dict]:
    """Read a GeoJSON FeatureCollection, sorted by tile id for determinism."""
    require_file(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise VizError(f"{path}: not valid JSON ({exc})") from exc
    feats = doc.get("features")
    if doc.get("type") != "FeatureCollection" or not isinstance(feats, list) or not feats:
        raise VizError(f"{path}: expected a non-empty GeoJSON FeatureCollection")
    for feat in feats:
        props = feat.get("properties") or {}
        missing = sorted(set(required_props) - set(props))
        if missing:
            raise VizError(
                f"{path}: feature properties missing: {', '.join(missing)}; "
                f"expected schema: {', '.join(required_props)}"
            )
        if need_geometry:
            geom = feat.get("geometry") or {}
            if geom.get("type") != "Polygon" or not geom.get("coordinates"):
                raise VizError(f"{path}: every feature needs Polygon geometry")
    return sorted(feats, key=lambda f: f["properties"]["id"])
