"""Origin/destination zone grid, centroid snapping and the external buffer."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .network import RoadNetwork

log = logging.getLogger(__name__)

DEFAULT_CELL_M = 2000.0
DEFAULT_BUFFER_MIN = 15.0

ZONE_HEADER = ["zone_id", "row", "col", "centroid_x", "centroid_y", "opportunities", "is_external"]


class ZoningError(ValueError):
    pass


@dataclass(frozen=True)
class Zone:
    zone_id: int
    row: int
    col: int
    centroid_x: float
    centroid_y: float
    opportunities: float = 0.0
    is_external: bool = False
    snap_node: Optional[int] = None

    def __post_init__(self):
        if not (self.opportunities >= 0 and math.isfinite(self.opportunities)):
            raise ZoningError(f"zone {self.zone_id}: opportunities must be finite and >= 0")


@dataclass(frozen=True)
class ZoneGrid:
    cell_size_m: float
    zones: tuple
    center_zone_id: Optional[int] = None

    def __post_init__(self):
        zones = tuple(sorted(self.zones, key=lambda z: z.zone_id))
        object.__setattr__(self, "zones", zones)
        ids = [z.zone_id for z in zones]
        if len(set(ids)) != len(ids):
            raise ZoningError("duplicate zone ids")
        if self.center_zone_id is not None:
            z = self.by_id().get(self.center_zone_id)
            if z is None:
                raise ZoningError(f"center zone {self.center_zone_id} not in grid")
            if z.is_external:
                raise ZoningError(f"center zone {self.center_zone_id} is external")

    def by_id(self) -> dict:
        return {z.zone_id: z for z in self.zones}

    @property
    def internal(self) -> tuple:
        return tuple(z for z in self.zones if not z.is_external)

    @property
    def zone_ids(self) -> tuple:
        return tuple(z.zone_id for z in self.zones)

    @property
    def origin_ids(self) -> tuple:
        return tuple(z.zone_id for z in self.internal)

    @property
    def opportunities(self) -> np.ndarray:
        return np.array([z.opportunities for z in self.zones], dtype=float)

    @property
    def centroids(self) -> np.ndarray:
        return np.array([(z.centroid_x, z.centroid_y) for z in self.zones], dtype=float).reshape(-1, 2)

    def cell_bounds(self, zone: Zone) -> tuple:
        h = self.cell_size_m / 2.0
        return (zone.centroid_x - h, zone.centroid_y - h, zone.centroid_x + h, zone.centroid_y + h)


def point_in_polygon(x, y, polygon: np.ndarray) -> np.ndarray:
    """Even-odd test of points against a closed ring (vectorised)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    xj, yj = poly[-1]
    for xi, yi in poly:
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < xcross)
        xj, yj = xi, yi
    return inside


def _aggregate_points(path, x0, y0, cell, nrows, ncols) -> np.ndarray:
    mass = np.zeros((nrows, ncols))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"x_m", "y_m", "mass"} <= set(reader.fieldnames):
            raise ZoningError(f"{path}: expected columns x_m,y_m,mass")
        for row in reader:
            x, y, m = float(row["x_m"]), float(row["y_m"]), float(row["mass"])
            c = int(math.floor((x - x0) / cell))
            r = int(math.floor((y - y0) / cell))
            if 0 <= r < nrows and 0 <= c < ncols:
                mass[r, c] += m
    return mass


def build_grid(bbox: Sequence[float], cell_size_m: Optional[float] = None,
               opportunities: Union[float, str, Path, Callable, None] = 1.0,
               mask: Optional[np.ndarray] = None,
               center_xy: Optional[Sequence[float]] = None) -> ZoneGrid:
    """Tile ``bbox`` = (xmin, ymin, xmax, ymax) with square cells.

    The grid origin is snapped down to a multiple of the cell size so grids
    built over different extents share cell boundaries.  ``opportunities``
    is a constant, a CSV of ``x_m,y_m,mass`` points summed per cell, or a
    callable ``f(cx, cy)``.  Cells whose centroid falls outside ``mask`` are
    external.  The center zone is the internal cell containing
    ``center_xy`` (default: middle of the internal cells).
    """
    cell = DEFAULT_CELL_M if cell_size_m is None else float(cell_size_m)
    if not cell > 0:
        raise ZoningError("cell size must be > 0")
    xmin, ymin, xmax, ymax = map(float, bbox)
    if not (xmax > xmin and ymax > ymin):
        raise ZoningError(f"empty bbox {tuple(bbox)}")
    x0 = math.floor(xmin / cell) * cell
    y0 = math.floor(ymin / cell) * cell
    ncols = max(1, math.ceil((xmax - x0) / cell - 1e-9))
    nrows = max(1, math.ceil((ymax - y0) / cell - 1e-9))

    if isinstance(opportunities, (str, Path)):
        mass = _aggregate_points(opportunities, x0, y0, cell, nrows, ncols)
    else:
        mass = None

    zones = []
    for r in range(nrows):
        for c in range(ncols):
            cx = x0 + (c + 0.5) * cell
            cy = y0 + (r + 0.5) * cell
            if mass is not None:
                d = float(mass[r, c])
            elif callable(opportunities):
                d = float(opportunities(cx, cy))
            else:
                d = float(opportunities if opportunities is not None else 0.0)
            ext = bool(mask is not None and not point_in_polygon(cx, cy, mask))
            zones.append(Zone(r * ncols + c, r, c, cx, cy, d, ext))
    grid = ZoneGrid(cell, tuple(zones))
    return replace(grid, center_zone_id=find_center_zone(grid, center_xy))


def find_center_zone(grid: ZoneGrid, center_xy: Optional[Sequence[float]] = None) -> int:
    internal = grid.internal
    if not internal:
        raise ZoningError("grid has no internal zones")
    xy = np.array([(z.centroid_x, z.centroid_y) for z in internal])
    if center_xy is None:
        center_xy = (xy.min(axis=0) + xy.max(axis=0)) / 2.0
    d = np.hypot(xy[:, 0] - center_xy[0], xy[:, 1] - center_xy[1])
    return internal[int(np.argmin(d))].zone_id


def snap_centroids(grid: ZoneGrid, network: RoadNetwork,
                   max_radius_m: Optional[float] = None) -> ZoneGrid:
    """Attach each zone to the nearest node (ties: lowest node id).

    Zones with no node within ``max_radius_m`` (default twice the cell
    size) are dropped with a warning.
    """
    if not network.nodes:
        raise ZoningError("network has no nodes")
    radius = 2.0 * grid.cell_size_m if max_radius_m is None else float(max_radius_m)
    xy = network.node_xy
    ids = [n.id for n in network.nodes]  # ascending, so argmin picks lowest id on ties
    kept = []
    for z in grid.zones:
        d = np.hypot(xy[:, 0] - z.centroid_x, xy[:, 1] - z.centroid_y)
        i = int(np.argmin(d))
        if d[i] > radius:
            log.warning("zone %d dropped: nearest node %d is %.0f m away (limit %.0f m)",
                        z.zone_id, ids[i], d[i], radius)
            continue
        kept.append(replace(z, snap_node=ids[i]))
    if not kept:
        raise ZoningError("all zones dropped while snapping centroids")
    center = grid.center_zone_id
    if center is not None and center not in {z.zone_id for z in kept}:
        raise ZoningError(f"center zone {center} dropped while snapping")
    return ZoneGrid(grid.cell_size_m, tuple(kept), center)


def midnight_times(network: RoadNetwork, sources: Sequence[int]) -> np.ndarray:
    """Multi-source shortest times (seconds) with each edge at its 00:00 speed."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra

    n = len(network.nodes)
    idx = network.node_index
    if not network.edges:
        out = np.full(n, np.inf)
        out[[idx[s] for s in sources]] = 0.0
        return out
    u = np.array([idx[e.from_node] for e in network.edges])
    v = np.array([idx[e.to_node] for e in network.edges])
    w = network.tau_table[:, 0].copy()
    # csr_matrix sums duplicates; keep the fastest parallel edge instead
    order = np.lexsort((w, v, u))
    u, v, w = u[order], v[order], w[order]
    first = np.ones(len(u), dtype=bool)
    first[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
    g = csr_matrix((w[first], (u[first], v[first])), shape=(n, n))
    src = sorted({idx[s] for s in sources})
    return np.atleast_1d(dijkstra(g, directed=True, indices=src, min_only=True))


def mark_external_buffer(grid: ZoneGrid, network: RoadNetwork,
                         threshold_min: Optional[float] = None) -> ZoneGrid:
    """Keep external zones reachable from any internal zone within the
    threshold at midnight; drop the others.  Internal zones are untouched."""
    threshold = DEFAULT_BUFFER_MIN if threshold_min is None else float(threshold_min)
    internal = grid.internal
    if any(z.snap_node is None for z in grid.zones):
        raise ZoningError("mark_external_buffer needs a snapped grid")
    if not internal:
        raise ZoningError("grid has no internal zones")
    times = midnight_times(network, [z.snap_node for z in internal])
    idx = network.node_index
    kept = []
    for z in grid.zones:
        if not z.is_external:
            kept.append(z)
        elif times[idx[z.snap_node]] <= threshold * 60.0:
            kept.append(z)
    dropped = len(grid.zones) - len(kept)
    if dropped:
        log.info("external buffer: dropped %d zones beyond %.1f min", dropped, threshold)
    return ZoneGrid(grid.cell_size_m, tuple(kept), grid.center_zone_id)


# ----------------------------------------------------------------------- I/O

def write_zones(grid: ZoneGrid, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ZONE_HEADER)
        for z in grid.zones:
            w.writerow([z.zone_id, z.row, z.col, repr(z.centroid_x), repr(z.centroid_y),
                        repr(z.opportunities), int(z.is_external)])


def read_zones(path, cell_size_m: Optional[float] = None,
               center_zone_id: Optional[int] = None) -> ZoneGrid:
    zones = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ZONE_HEADER:
            raise ZoningError(f"{path}:1: bad header")
        for row in reader:
            if not row:
                continue
            if len(row) != len(ZONE_HEADER):
                raise ZoningError(f"{path}:{reader.line_num}: expected {len(ZONE_HEADER)} fields")
            try:
                ext = row[6].strip().lower()
                if ext not in ("0", "1", "true", "false"):
                    raise ValueError(ext)
                zones.append(Zone(int(row[0]), int(row[1]), int(row[2]), float(row[3]),
                                  float(row[4]), float(row[5]), ext in ("1", "true")))
            except ValueError as exc:
                raise ZoningError(f"{path}:{reader.line_num}: {exc}") from None
    cell = DEFAULT_CELL_M if cell_size_m is None else float(cell_size_m)
    grid = ZoneGrid(cell, tuple(zones))
    if center_zone_id is None:
        center_zone_id = find_center_zone(grid)
    return replace(grid, center_zone_id=center_zone_id)


def read_mask(path) -> np.ndarray:
    """Closed polygon, one ``x,y`` vertex per line (optional header)."""
    pts = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise ZoningError(f"{path}:{lineno}: bad vertex {row}") from None
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts.pop()
    if len(pts) < 3:
        raise ZoningError(f"{path}: mask needs at least 3 vertices")
    return np.array(pts)


def write_mask(polygon: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in polygon:
            w.writerow([repr(float(x)), repr(float(y))])
