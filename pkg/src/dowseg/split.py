"""Stratified spatial dataset splitting on a square grid.

Buildings are binned into grid cells by centroid (half-open cell bounds, so
every point lands in exactly one cell), cells are partitioned into
train/val/test by a deterministic greedy that prioritises the rarest
classes, and footprints straddling cells of different sets yield leakage
masks for the foreign set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from shapely.geometry import Polygon, box, shape
from shapely.geometry.base import BaseGeometry

from .errors import FormatError, ValidationError
from .io import read_geojson, write_feature_collection

SET_NAMES = ("train", "val", "test")

Cell = tuple[int, int]


@dataclass
class BuildingRecord:
    id: int | str
    centroid: tuple[float, float]  # world coordinates, meters
    footprint: Polygon
    class_id: int


@dataclass
class GridSpec:
    """Axis-aligned square grid anchored at the extent's min corner."""

    origin_x: float
    origin_y: float
    cell_size: float
    nx: int
    ny: int

    def cell_of(self, x: float, y: float) -> Cell:
        i = math.floor((x - self.origin_x) / self.cell_size)
        j = math.floor((y - self.origin_y) / self.cell_size)
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise ValidationError(f"point ({x}, {y}) falls outside the grid extent")
        return (i, j)

    def cell_box(self, cell: Cell) -> BaseGeometry:
        i, j = cell
        x0 = self.origin_x + i * self.cell_size
        y0 = self.origin_y + j * self.cell_size
        return box(x0, y0, x0 + self.cell_size, y0 + self.cell_size)

    def cells(self) -> list[Cell]:
        return [(i, j) for i in range(self.nx) for j in range(self.ny)]


@dataclass
class GridSplit:
    grid: GridSpec
    assignment: dict[Cell, str]
    set_counts: dict[str, dict[int, int]]
    fractions: dict[str, float]
    mask_regions: dict[str, list[tuple[int | str, Polygon]]] = field(default_factory=dict)


def build_grid(extent: tuple[float, float, float, float], cell_size: float = 225.0) -> GridSpec:
    """Square grid covering (min_x, min_y, max_x, max_y); cell count ceils up.

    Cells are half-open [x0, x1) x [y0, y1): a point on a shared edge
    belongs to the cell whose lower bound it touches.
    """
    min_x, min_y, max_x, max_y = extent
    if not (max_x > min_x and max_y > min_y):
        raise ValidationError("extent must have positive width and height")
    if cell_size <= 0:
        raise ValidationError("cell_size must be positive")
    nx = math.ceil((max_x - min_x) / cell_size)
    ny = math.ceil((max_y - min_y) / cell_size)
    return GridSpec(min_x, min_y, cell_size, nx, ny)


def cell_class_counts(buildings: list[BuildingRecord], grid: GridSpec) -> dict[Cell, dict[int, int]]:
    """Histogram of class counts per cell; each building counts once."""
    counts: dict[Cell, dict[int, int]] = {}
    for b in buildings:
        cell = grid.cell_of(*b.centroid)
        hist = counts.setdefault(cell, {})
        hist[b.class_id] = hist.get(b.class_id, 0) + 1
    return counts


def _priority_order(totals: dict[int, int]) -> list[int]:
    """Classes ordered rarest first (ties by class id)."""
    return sorted(totals, key=lambda c: (totals[c], c))


def partition_cells(
    counts: dict[Cell, dict[int, int]],
    fractions: dict[str, float],
    grid: GridSpec | None = None,
    priority: list[int] | None = None,
) -> GridSplit:
    """Assign cells to train/val/test tracking per-class target fractions.

    Deterministic greedy: cells are sorted by descending counts of the
    priority classes (rarest global class first), then by cell index; each
    cell goes to the set whose class-count vector is furthest below its
    target, the distance compared lexicographically on the priority classes
    and then on total count. Empty-count cells of the grid (if given) are
    assigned too.
    """
    if set(fractions) != set(SET_NAMES):
        raise ValidationError(f"fractions must define exactly {SET_NAMES}")
    if abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise ValidationError("fractions must sum to 1")
    totals: dict[int, int] = {}
    for hist in counts.values():
        for c, n in hist.items():
            totals[c] = totals.get(c, 0) + n
    if priority is None:
        priority = _priority_order(totals)
    cells = set(counts)
    if grid is not None:
        cells |= set(grid.cells())

    order = sorted(
        cells,
        key=lambda cell: tuple(-counts.get(cell, {}).get(c, 0) for c in priority) + (cell,),
    )
    targets = {s: {c: fractions[s] * totals.get(c, 0) for c in priority} for s in SET_NAMES}
    target_total = {s: fractions[s] * sum(totals.values()) for s in SET_NAMES}
    current = {s: {c: 0 for c in priority} for s in SET_NAMES}
    current_total = {s: 0 for s in SET_NAMES}

    assignment: dict[Cell, str] = {}
    for cell in order:
        hist = counts.get(cell, {})
        # Distance below target is compared on the classes this cell would
        # add (in priority order), then on total count; classes the cell
        # does not contain cannot steer its placement.
        present = [c for c in priority if hist.get(c, 0) > 0]

        def deficit(s: str) -> tuple:
            per_class = tuple(targets[s][c] - current[s][c] for c in present)
            return per_class + (target_total[s] - current_total[s],)

        chosen = max(SET_NAMES, key=lambda s: (deficit(s), -SET_NAMES.index(s)))
        assignment[cell] = chosen
        for c, n in hist.items():
            current[chosen][c] += n
        current_total[chosen] += sum(hist.values())

    set_counts = {s: {c: current[s][c] for c in sorted(totals)} for s in SET_NAMES}
    return GridSplit(
        grid=grid if grid is not None else _bounding_grid(cells),
        assignment=assignment,
        set_counts=set_counts,
        fractions=dict(fractions),
        mask_regions={s: [] for s in SET_NAMES},
    )


def _bounding_grid(cells: set[Cell]) -> GridSpec:
    # Placeholder grid when the caller partitioned bare histograms; cell
    # geometry is unknown, so use unit cells over the index range.
    nx = max(i for i, _ in cells) + 1 if cells else 0
    ny = max(j for _, j in cells) + 1 if cells else 0
    return GridSpec(0.0, 0.0, 1.0, nx, ny)


def leakage_masks(buildings: list[BuildingRecord], split: GridSplit) -> GridSplit:
    """Clip each footprint against foreign-set cells into mask regions.

    A building's pixels live in its centroid cell's set; any footprint part
    lying in a cell assigned to a different set is emitted as a mask region
    attributed to that foreign set (to be zeroed there).
    """
    grid = split.grid
    masks: dict[str, list[tuple[int | str, Polygon]]] = {s: [] for s in SET_NAMES}
    for b in buildings:
        home = split.assignment[grid.cell_of(*b.centroid)]
        min_x, min_y, max_x, max_y = b.footprint.bounds
        i0 = max(int(math.floor((min_x - grid.origin_x) / grid.cell_size)), 0)
        j0 = max(int(math.floor((min_y - grid.origin_y) / grid.cell_size)), 0)
        i1 = min(int(math.floor((max_x - grid.origin_x) / grid.cell_size)), grid.nx - 1)
        j1 = min(int(math.floor((max_y - grid.origin_y) / grid.cell_size)), grid.ny - 1)
        for i in range(i0, i1 + 1):
            for j in range(j0, j1 + 1):
                cell = (i, j)
                owner = split.assignment.get(cell)
                if owner is None or owner == home:
                    continue
                piece = b.footprint.intersection(grid.cell_box(cell))
                for poly in _polygon_parts(piece):
                    masks[owner].append((b.id, poly))
    return replace(split, mask_regions=masks)


def _polygon_parts(geom: BaseGeometry) -> list[Polygon]:
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom] if geom.area > 0 else []
    if hasattr(geom, "geoms"):
        out = []
        for g in geom.geoms:
            out.extend(_polygon_parts(g))
        return out
    return []  # lines/points from edge-touching intersections carry no area


# ---------------------------------------------------------------------------
# GeoJSON plumbing for the CLI
# ---------------------------------------------------------------------------


def load_buildings(path) -> list[BuildingRecord]:
    """Read buildings from GeoJSON; class comes from properties["class"]."""
    records = []
    for idx, feature in enumerate(read_geojson(path)):
        props = feature.get("properties") or {}
        if "class" not in props:
            raise FormatError(f"{path}: feature {idx} lacks a class property")
        geom = shape(feature["geometry"])
        polys = _polygon_parts(geom)
        if not polys:
            raise FormatError(f"{path}: feature {idx} has no polygonal geometry")
        footprint = max(polys, key=lambda p: p.area) if len(polys) > 1 else polys[0]
        centroid = footprint.centroid
        records.append(
            BuildingRecord(
                id=props.get("id", idx),
                centroid=(centroid.x, centroid.y),
                footprint=footprint,
                class_id=int(props["class"]),
            )
        )
    return records


def write_split_json(split: GridSplit, path) -> None:
    import json

    payload = {
        "cell_size": split.grid.cell_size,
        "origin": [split.grid.origin_x, split.grid.origin_y],
        "fractions": {s: split.fractions[s] for s in SET_NAMES},
        "cells": {f"{i},{j}": split.assignment[(i, j)] for i, j in sorted(split.assignment)},
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(payload, fp, indent=2, sort_keys=True)
        fp.write("\n")


def write_set_counts_csv(split: GridSplit, path) -> None:
    classes = sorted({c for counts in split.set_counts.values() for c in counts})
    lines = ["set,class,count"]
    for s in SET_NAMES:
        for c in classes:
            lines.append(f"{s},{c},{split.set_counts[s].get(c, 0)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write("\n".join(lines) + "\n")


def write_mask_geojson(split: GridSplit, set_name: str, path) -> None:
    features = []
    for bid, poly in sorted(split.mask_regions[set_name], key=lambda t: str(t[0])):
        exterior = [[float(x), float(y)] for x, y in poly.exterior.coords]
        holes = [[[float(x), float(y)] for x, y in r.coords] for r in poly.interiors]
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [exterior] + holes},
                "properties": {"building": bid, "masked_in": set_name},
            }
        )
    write_feature_collection(features, path)
