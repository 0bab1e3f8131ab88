"""Array, polygon and report I/O.

Arrays travel as NPY files (version 1.0 emitted, 1.0/2.0 accepted) restricted
to little-endian uint8/uint16/uint32/float32 in C order. Polygons are written
as RFC 7946 GeoJSON FeatureCollections, metric reports as JSON or CSV with all
numbers fixed to six decimal places. Pixel coordinates are the default; an
optional ``<stem>.georef.json`` sidecar ``{origin_x, origin_y, pixel_size}``
maps them to world coordinates.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib import format as npy_format

from .errors import FormatError, UnsupportedError, ValidationError

SUPPORTED_DTYPES = ("uint8", "uint16", "uint32", "float32")


# ---------------------------------------------------------------------------
# NPY arrays
# ---------------------------------------------------------------------------


def read_array(path: str | os.PathLike) -> np.ndarray:
    """Read a 2D raster (or 3D stack with a leading layer axis) from NPY.

    Accepts NPY versions 1.0 and 2.0, C-order, dtypes uint8/uint16/uint32/
    float32 only. Values are returned exactly as stored.
    """
    with open(path, "rb") as fp:
        try:
            version = npy_format.read_magic(fp)
        except ValueError as exc:
            raise FormatError(f"{path}: not an NPY file ({exc})") from exc
        if version not in ((1, 0), (2, 0)):
            raise UnsupportedError(f"{path}: NPY version {version} not supported")
        try:
            if version == (1, 0):
                shape, fortran, dtype = npy_format.read_array_header_1_0(fp)
            else:
                shape, fortran, dtype = npy_format.read_array_header_2_0(fp)
        except ValueError as exc:
            raise FormatError(f"{path}: malformed NPY header ({exc})") from exc
        if fortran:
            raise UnsupportedError(f"{path}: Fortran-order arrays not supported")
        if dtype.name not in SUPPORTED_DTYPES or dtype.byteorder == ">":
            raise UnsupportedError(f"{path}: dtype {dtype.str} not supported")
        if len(shape) not in (2, 3):
            raise UnsupportedError(f"{path}: expected 2D or 3D array, got shape {shape}")
        count = int(np.prod(shape)) if shape else 0
        data = np.fromfile(fp, dtype=dtype, count=count)
        if data.size != count:
            raise FormatError(f"{path}: truncated data section")
    return data.reshape(shape)


def write_array(a: np.ndarray, path: str | os.PathLike) -> None:
    """Write an array as NPY version 1.0 with the canonical minimal header."""
    a = np.asarray(a)
    if a.dtype.name not in SUPPORTED_DTYPES:
        raise ValidationError(f"dtype {a.dtype} not supported; use one of {SUPPORTED_DTYPES}")
    if a.ndim not in (2, 3):
        raise ValidationError(f"expected 2D or 3D array, got {a.ndim}D")
    with open(path, "wb") as fp:
        npy_format.write_array(fp, np.ascontiguousarray(a), version=(1, 0))


# ---------------------------------------------------------------------------
# Polygons
# ---------------------------------------------------------------------------

Ring = list[tuple[float, float]]


@dataclass
class PolygonRecord:
    """One polygon: a closed exterior ring plus zero or more hole rings.

    Ring orientation follows the shoelace sign in (x=column, y=row)
    coordinates: exteriors positive (counter-clockwise), holes negative.
    """

    exterior: Ring
    holes: list[Ring] = field(default_factory=list)
    class_id: int | None = None
    confidence: float | None = None


@dataclass
class PolygonSet:
    polygons: list[PolygonRecord]


@dataclass
class Georef:
    """Affine pixel-to-world mapping: origin at the top-left pixel corner."""

    origin_x: float
    origin_y: float
    pixel_size: float

    def to_world(self, x: float, y: float) -> tuple[float, float]:
        return (self.origin_x + x * self.pixel_size, self.origin_y - y * self.pixel_size)


def read_georef_sidecar(array_path: str | os.PathLike) -> Georef | None:
    """Load ``<stem>.georef.json`` next to an array file, if present."""
    base, _ = os.path.splitext(os.fspath(array_path))
    sidecar = base + ".georef.json"
    if not os.path.exists(sidecar):
        return None
    with open(sidecar, encoding="utf-8") as fp:
        d = json.load(fp)
    return Georef(float(d["origin_x"]), float(d["origin_y"]), float(d["pixel_size"]))


def ring_area(ring: Ring) -> float:
    """Signed shoelace area; positive = counter-clockwise."""
    s = 0.0
    for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def _check_ring(ring: Ring) -> None:
    if len(ring) < 4:
        raise ValidationError(f"degenerate ring with {len(ring)} vertices")
    if ring[0] != ring[-1]:
        raise ValidationError("ring is not closed (first vertex != last)")


def _oriented(ring: Ring, ccw: bool) -> Ring:
    if (ring_area(ring) > 0) != ccw:
        return ring[::-1]
    return ring


def write_geojson(p: PolygonSet, path: str | os.PathLike, georef: Georef | None = None) -> None:
    """Write polygons as an RFC 7946 FeatureCollection.

    One Feature per polygon with properties ``{class, confidence}``. Exterior
    rings are emitted counter-clockwise, holes clockwise. Coordinates are
    pixel corners unless a georef is given.
    """
    features = []
    for rec in p.polygons:
        _check_ring(rec.exterior)
        for h in rec.holes:
            _check_ring(h)
        rings = [_oriented(rec.exterior, ccw=True)]
        rings += [_oriented(h, ccw=False) for h in rec.holes]
        if georef is not None:
            rings = [[georef.to_world(x, y) for x, y in r] for r in rings]
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[float(x), float(y)] for x, y in r] for r in rings],
                },
                "properties": {"class": rec.class_id, "confidence": rec.confidence},
            }
        )
    write_feature_collection(features, path)


def write_feature_collection(features: list[dict], path: str | os.PathLike) -> None:
    collection = {"type": "FeatureCollection", "features": features}
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(collection, fp, separators=(",", ":"))
        fp.write("\n")


def read_geojson(path: str | os.PathLike) -> list[dict]:
    """Read a GeoJSON FeatureCollection, returning its feature list."""
    with open(path, encoding="utf-8") as fp:
        try:
            d = json.load(fp)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if d.get("type") != "FeatureCollection" or "features" not in d:
        raise FormatError(f"{path}: not a GeoJSON FeatureCollection")
    return d["features"]


# ---------------------------------------------------------------------------
# Metric reports
# ---------------------------------------------------------------------------


def _fmt(v: float | int | None) -> str | None:
    if v is None:
        return None
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if np.isnan(v):
        return None
    return f"{float(v):.6f}"


def write_report(report, path: str | os.PathLike, format: str = "json") -> None:
    """Serialize a MetricsReport; absent metrics become null / empty cells.

    JSON mirrors the report structure with every number written to six
    decimal places. CSV is long-format with columns metric,class,value
    (class empty for scalar metrics); an empty report yields header only.
    """
    if format not in ("json", "csv"):
        raise ValidationError(f"unknown report format {format!r}")
    scalars = [
        ("iou_binary", report.iou_binary),
        ("miou3", report.miou3),
        ("miou5", report.miou5),
        ("ap50", report.ap50),
        ("map50_3", report.map50_3),
        ("map50_5", report.map50_5),
        ("ap50_95", report.ap50_95),
        ("tps", report.tps),
    ]
    if format == "json":
        # Hand-built so fixed-point numbers keep their trailing zeros.
        lines = ["{"]
        for name, v in scalars:
            s = _fmt(v)
            lines.append(f'  "{name}": {s if s is not None else "null"},')
        for key, d in (("per_class_iou", report.per_class_iou), ("per_class_ap", report.per_class_ap)):
            items = ", ".join(
                f'"{c}": {_fmt(v) if _fmt(v) is not None else "null"}' for c, v in sorted(d.items())
            )
            lines.append(f'  "{key}": {{{items}}},')
        lines[-1] = lines[-1].rstrip(",")
        lines.append("}")
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            fp.write("\n".join(lines) + "\n")
        return

    lines = ["metric,class,value"]
    if not report.is_empty():
        for name, v in scalars:
            lines.append(f"{name},,{_fmt(v) if _fmt(v) is not None else ''}")
        for c, v in sorted(report.per_class_iou.items()):
            lines.append(f"class_iou,{c},{_fmt(v) if _fmt(v) is not None else ''}")
        for c, v in sorted(report.per_class_ap.items()):
            lines.append(f"class_ap,{c},{_fmt(v) if _fmt(v) is not None else ''}")
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write("\n".join(lines) + "\n")
