"""Instance extraction from predicted mask stacks.

Turns nested level masks into separated objects by marker-based watershed
flooding, labels connected components, assigns classes and confidence
scores from probability stacks, and traces pixel-exact boundary polygons.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage as ndi

from .errors import ValidationError
from .io import PolygonRecord, PolygonSet

__all__ = [
    "ProbabilityStack",
    "InstanceRecord",
    "InstanceSet",
    "connected_components",
    "threshold_levels",
    "elevation_map",
    "dow_watershed",
    "assign_class_and_confidence",
    "score_binary_confidence",
    "polygonize",
]

_STRUCT_8 = np.ones((3, 3), dtype=bool)
_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# Fixed neighbour order for the flood (row-major over the 3x3 window).
_OFFSETS_8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_OFFSETS_4 = [(-1, 0), (0, -1), (0, 1), (1, 0)]


@dataclass
class ProbabilityStack:
    """Stack of per-layer probability maps.

    ``kind`` is "class" (one layer per class id, summing to one per pixel)
    or "level" (one layer per ordinal level, independently in [0, 1]).
    """

    layers: np.ndarray  # (L, H, W) float32
    kind: str = "class"
    class_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=np.float32)
        if self.layers.ndim != 3:
            raise ValidationError("probability stack must be (layers, H, W)")
        if self.kind not in ("class", "level"):
            raise ValidationError(f"unknown stack kind {self.kind!r}")
        lo, hi = float(self.layers.min(initial=0.0)), float(self.layers.max(initial=0.0))
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise ValidationError(f"probabilities outside [0, 1]: min={lo}, max={hi}")
        if self.kind == "class":
            if self.class_ids is None:
                self.class_ids = tuple(range(1, self.layers.shape[0] + 1))
            if len(self.class_ids) != self.layers.shape[0]:
                raise ValidationError("class_ids length must match layer count")
            sums = self.layers.sum(axis=0)
            if sums.size and np.abs(sums - 1.0).max() > 1e-4:
                raise ValidationError("class probabilities must sum to 1 per pixel")


@dataclass
class InstanceRecord:
    id: int
    class_id: int | None = None
    confidence: float | None = None
    pixel_count: int = 0


@dataclass
class InstanceSet:
    """Dense instance labeling (ids 1..N) plus one record per instance."""

    instance_map: np.ndarray  # uint32
    records: list[InstanceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def _dense_relabel(lab: np.ndarray) -> np.ndarray:
    """Relabel nonzero regions to 1..N in first-encounter row-major order."""
    flat = lab.ravel()
    uniq, first = np.unique(flat, return_index=True)
    keep = uniq != 0
    uniq, first = uniq[keep], first[keep]
    order = np.argsort(first, kind="stable")
    mapping = np.zeros(int(uniq.max()) + 1 if uniq.size else 1, dtype=np.uint32)
    mapping[uniq[order]] = np.arange(1, uniq.size + 1, dtype=np.uint32)
    return mapping[lab]


def _records_from_map(inst_map: np.ndarray) -> list[InstanceRecord]:
    counts = np.bincount(inst_map.ravel())
    return [InstanceRecord(id=i, pixel_count=int(counts[i])) for i in range(1, len(counts))]


def connected_components(mask: np.ndarray, connectivity: int = 8) -> InstanceSet:
    """Label maximal connected foreground regions 1..N (row-major order)."""
    if connectivity not in (4, 8):
        raise ValidationError("connectivity must be 4 or 8")
    mask = np.asarray(mask).astype(bool)
    struct = _STRUCT_8 if connectivity == 8 else _STRUCT_4
    lab, _ = ndi.label(mask, structure=struct)
    lab = _dense_relabel(lab.astype(np.uint32))
    return InstanceSet(lab, _records_from_map(lab))


def threshold_levels(p: ProbabilityStack, t: float = 0.5) -> np.ndarray:
    """Threshold a level stack at ``t`` and re-nest by intersection.

    A pixel can only belong to level m if it also belongs to every level
    below, so each layer is intersected with its predecessor.
    """
    if p.kind != "level":
        raise ValidationError("threshold_levels expects a level stack")
    masks = p.layers >= t
    for m in range(1, masks.shape[0]):
        masks[m] &= masks[m - 1]
    return masks


def elevation_map(level_masks: np.ndarray) -> np.ndarray:
    """Per-pixel height: the number of level masks marking the pixel."""
    return np.sum(np.asarray(level_masks, dtype=bool), axis=0).astype(np.uint8)


def _check_nested(masks: np.ndarray) -> None:
    for m in range(1, masks.shape[0]):
        if np.any(masks[m] & ~masks[m - 1]):
            raise ValidationError(f"level masks are not nested at level {m + 1}")


def dow_watershed(level_masks, connectivity: int = 8) -> InstanceSet:
    """Separate instances by flooding nested level masks from interior markers.

    Markers are the connected components of each level-1 component's
    deepest non-empty level. The flood assigns every level-1 pixel to
    exactly one marker basin, visiting pixels through a priority queue keyed
    by (height ascending, row-major pixel index): deeper pixels first, ties
    resolved by position, so results are identical across runs. Level-1
    components without any deeper pixel become single instances whole.
    """
    if isinstance(level_masks, np.ndarray):
        masks = level_masks.astype(bool)
    else:  # OrdinalTargets or sequence of masks
        masks = np.asarray(getattr(level_masks, "masks", level_masks)).astype(bool)
    if masks.ndim != 3 or masks.shape[0] < 1:
        raise ValidationError("level masks must be (n_lev, H, W) with n_lev >= 1")
    if connectivity not in (4, 8):
        raise ValidationError("connectivity must be 4 or 8")
    _check_nested(masks)

    n_lev, h, w = masks.shape
    heights = elevation_map(masks)
    comp = connected_components(masks[0], connectivity=connectivity)
    struct = _STRUCT_8 if connectivity == 8 else _STRUCT_4
    offsets = _OFFSETS_8 if connectivity == 8 else _OFFSETS_4
    out = np.zeros((h, w), dtype=np.uint32)

    next_id = 1
    seeds: list[tuple[int, int]] = []  # (encoded priority, flat index)
    comp_map = comp.instance_map
    for rec in comp.records:
        region = comp_map == rec.id
        deepest = int(heights[region].max())
        if deepest <= 1:
            out[region] = next_id
            next_id += 1
            continue
        marker_mask = region & masks[deepest - 1]
        markers, n_markers = ndi.label(marker_mask, structure=struct)
        markers = _dense_relabel(markers.astype(np.uint32))
        for m in range(1, n_markers + 1):
            out[markers == m] = next_id
            next_id += 1

    # Priority flood over all marked pixels at once; basins cannot cross
    # level-1 component boundaries because the flood never leaves mask 1.
    size = h * w
    hh = heights.ravel()
    oo = out.ravel()
    m1 = masks[0].ravel()
    for flat in np.flatnonzero(oo):
        seeds.append(((n_lev - int(hh[flat])) * size + int(flat), int(flat)))
    heapq.heapify(seeds)
    while seeds:
        _, flat = heapq.heappop(seeds)
        label = oo[flat]
        r, c = divmod(flat, w)
        for dr, dc in offsets:
            nr, nc = r + dr, c + dc
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            nflat = nr * w + nc
            if m1[nflat] and oo[nflat] == 0:
                oo[nflat] = label
                heapq.heappush(seeds, ((n_lev - int(hh[nflat])) * size + nflat, nflat))

    out = _dense_relabel(out)
    return InstanceSet(out, _records_from_map(out))


def assign_class_and_confidence(
    inst: InstanceSet,
    p: ProbabilityStack,
    interior_p: ProbabilityStack | None = None,
    interior_mask: np.ndarray | None = None,
) -> InstanceSet:
    """Classify instances and score their confidence from class probabilities.

    The class is the argmax of the mean per-class probability over the
    instance's interior pixels when an interior stack is supplied and the
    interior is nonempty, otherwise over all instance pixels from ``p``
    (ties broken by lowest class id). Confidence is always the mean
    probability of the chosen class over *all* instance pixels of ``p``.
    """
    if p.kind != "class":
        raise ValidationError("assign_class_and_confidence expects a class stack")
    if p.layers.shape[1:] != inst.instance_map.shape:
        raise ValidationError("probability stack does not align with the instance map")
    if interior_p is not None:
        if interior_p.kind != "class":
            raise ValidationError("interior stack must be a class stack")
        if interior_mask is None:
            raise ValidationError("interior probabilities require the interior mask")
        if tuple(interior_p.class_ids) != tuple(p.class_ids):
            raise ValidationError("interior stack must carry the same class ids")
    class_ids = list(p.class_ids)

    new_records = []
    for rec in inst.records:
        pix = inst.instance_map == rec.id
        if not pix.any():
            raise ValidationError(f"instance {rec.id} has no pixels")
        means = p.layers[:, pix].mean(axis=1)
        if interior_p is not None:
            ipix = pix & np.asarray(interior_mask, dtype=bool)
            if ipix.any():
                means = interior_p.layers[:, ipix].mean(axis=1)
        best = max(range(len(class_ids)), key=lambda i: (means[i], -class_ids[i]))
        chosen = class_ids[best]
        conf = float(p.layers[class_ids.index(chosen)][pix].mean())
        new_records.append(replace(rec, class_id=chosen, confidence=conf))
    return InstanceSet(inst.instance_map, new_records)


def score_binary_confidence(inst: InstanceSet, foreground_prob: np.ndarray) -> InstanceSet:
    """Class-less scoring: confidence = mean foreground probability, class 1."""
    fg = np.asarray(foreground_prob, dtype=np.float64)
    if fg.shape != inst.instance_map.shape:
        raise ValidationError("foreground probability does not align with the instance map")
    new_records = []
    for rec in inst.records:
        pix = inst.instance_map == rec.id
        if not pix.any():
            raise ValidationError(f"instance {rec.id} has no pixels")
        new_records.append(replace(rec, class_id=1, confidence=float(fg[pix].mean())))
    return InstanceSet(inst.instance_map, new_records)


# ---------------------------------------------------------------------------
# Polygonization
# ---------------------------------------------------------------------------


def polygonize(inst: InstanceSet) -> PolygonSet:
    """Trace pixel-corner boundary polygons for every instance.

    Rings follow pixel edges exactly, so rasterizing them back (even-odd
    rule at pixel centers) reproduces the pixel set. Exterior rings come
    out with positive shoelace area, holes negative. Instances pinched at a
    corner split into several simple polygons sharing the same attributes.
    """
    polys: list[PolygonRecord] = []
    for rec in inst.records:
        mask = inst.instance_map == rec.id
        rings = _trace_rings(mask)
        exteriors = [(ring, []) for ring, area, _ in rings if area > 0]
        for ring, area, witness in rings:
            if area > 0:
                continue
            host = _containing_ring(witness, [e[0] for e in exteriors])
            exteriors[host][1].append(ring)
        for ring, holes in exteriors:
            polys.append(
                PolygonRecord(
                    exterior=ring,
                    holes=holes,
                    class_id=rec.class_id,
                    confidence=rec.confidence,
                )
            )
    return PolygonSet(polys)


def _trace_rings(mask: np.ndarray):
    """Stitch directed boundary edges into closed rings.

    Edges are oriented with the mask interior on their left, so exterior
    rings close counter-clockwise (positive shoelace) and holes clockwise.
    At pinch vertices with two outgoing edges the leftmost turn is taken,
    which keeps every ring simple. Returns (ring, signed_area, witness)
    with the witness being the center of a complement pixel adjacent to the
    ring's first edge (strictly inside for hole rings).
    """
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    edges: dict[tuple, list[tuple]] = {}

    def add(a, b, across):
        edges.setdefault(a, []).append((b, across))

    rs, cs = np.nonzero(mask)
    for r, c in zip(rs.tolist(), cs.tolist()):
        if not padded[r, c + 1]:  # neighbour above
            add((c, r), (c + 1, r), (r - 1, c))
        if not padded[r + 1, c + 2]:  # right
            add((c + 1, r), (c + 1, r + 1), (r, c + 1))
        if not padded[r + 2, c + 1]:  # below
            add((c + 1, r + 1), (c, r + 1), (r + 1, c))
        if not padded[r + 1, c]:  # left
            add((c, r + 1), (c, r), (r, c - 1))

    for lst in edges.values():
        lst.sort()
    rings = []
    used: set[tuple] = set()
    for start in sorted(edges):
        for end, across in edges[start]:
            if (start, end) in used:
                continue
            ring = [start, end]
            first_across = across
            used.add((start, end))
            prev, cur = start, end
            while cur != ring[0]:
                din = (cur[0] - prev[0], cur[1] - prev[1])
                best, best_cross = None, None
                for nxt, _ in edges.get(cur, ()):
                    if (cur, nxt) in used:
                        continue
                    dout = (nxt[0] - cur[0], nxt[1] - cur[1])
                    cross = din[0] * dout[1] - din[1] * dout[0]
                    if best_cross is None or cross > best_cross:
                        best, best_cross = nxt, cross
                used.add((cur, best))
                ring.append(best)
                prev, cur = cur, best
            ring = _drop_collinear(ring)
            area = 0.5 * sum(
                x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:])
            )
            witness = (first_across[1] + 0.5, first_across[0] + 0.5)  # (x, y)
            rings.append(([(float(x), float(y)) for x, y in ring], area, witness))
    return rings


def _drop_collinear(ring):
    """Remove vertices that continue straight; keeps corners only."""
    body = ring[:-1]
    keep = []
    n = len(body)
    for i in range(n):
        a, b, c = body[i - 1], body[i], body[(i + 1) % n]
        if (b[0] - a[0], b[1] - a[1]) != (c[0] - b[0], c[1] - b[1]):
            keep.append(b)
    return keep + [keep[0]]


def _containing_ring(point, rings) -> int:
    """Index of the ring containing ``point`` (even-odd ray cast along +x)."""
    px, py = point
    for i, ring in enumerate(rings):
        inside = False
        for (x0, y0), (x1, y1) in zip(ring[:-1], ring[1:]):
            if (y0 > py) != (y1 > py):
                x_at = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
                if x_at > px:
                    inside = not inside
        if inside:
            return i
    raise ValidationError("hole ring without a containing exterior")
