"""Radial time cartograms centred on one focal point.

Reference line-work is densified into points, each point gets the unit
vector from the focal point, and per scenario its distance from the focal
point is replaced by the travel time interpolated (IDW) from the zone
samples, times a km-per-minute scale.  Points may overlap or overtake one
another; nothing here tries to prevent it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

DEFAULT_SPACING_M = 250.0
DEFAULT_IDW_POWER = 2.0
EXACT_EPS_M = 1e-9
KINDS = ("line", "polygon", "point")
LAYER_HEADER = ["layer", "part", "seq", "x", "y", "kind"]


class CartogramError(ValueError):
    pass


@dataclass
class Layer:
    """Named geometry: each part is an (n, 2) array.  Polygon parts are
    stored open (no repeated closing vertex) and are implicitly closed."""

    name: str
    kind: str
    parts: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CartogramError(f"layer {self.name}: unknown kind {self.kind!r}")
        parts = []
        for p in self.parts:
            a = np.asarray(p, dtype=float).reshape(-1, 2)
            if not np.isfinite(a).all():
                raise CartogramError(f"layer {self.name}: non-finite vertex")
            if self.kind == "polygon" and len(a) > 1 and np.array_equal(a[0], a[-1]):
                a = a[:-1]
            parts.append(a)
        self.parts = parts

    @property
    def closed(self) -> bool:
        return self.kind == "polygon"

    def bounds(self) -> Optional[tuple]:
        if not self.parts:
            return None
        a = np.vstack(self.parts)
        return (*a.min(axis=0), *a.max(axis=0))


# ---------------------------------------------------------------- steps 1-3

def densify(vertices, max_spacing_m: float = DEFAULT_SPACING_M, closed: bool = False) -> np.ndarray:
    """Insert evenly spaced points so no gap exceeds ``max_spacing_m``.

    A segment of length L becomes ceil(L / max_spacing) equal pieces.
    Original vertices are kept in order.  For ``closed`` rings the closing
    segment is densified too; the result stays open.
    """
    v = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if not max_spacing_m > 0:
        raise CartogramError("max spacing must be > 0")
    if len(v) < 2:
        raise CartogramError("densify needs at least 2 vertices")
    ring = np.vstack([v, v[:1]]) if closed else v
    seg = np.diff(ring, axis=0)
    lengths = np.hypot(seg[:, 0], seg[:, 1])
    if not lengths.sum() > 0:
        raise CartogramError("degenerate zero-length geometry")
    out = [ring[:1]]
    for a, b, d, L in zip(ring[:-1], ring[1:], seg, lengths):
        pieces = max(1, math.ceil(L / max_spacing_m - 1e-9))
        f = np.arange(1, pieces)[:, None] / pieces
        out.append(a + f * d)
        out.append(b[None, :])
    pts = np.vstack(out)
    return pts[:-1] if closed else pts


def unit_vectors(points, center) -> np.ndarray:
    """Unit vectors from ``center`` to each point; zero for the center itself."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    c = np.asarray(center, dtype=float)
    if not np.isfinite(c).all():
        raise CartogramError("center must be finite")
    d = p - c
    r = np.hypot(d[:, 0], d[:, 1])
    out = np.zeros_like(d)
    nz = r > 0
    out[nz] = d[nz] / r[nz, None]
    return out


@dataclass
class DensePoints:
    """All points of a layer set, flattened, with their origin recorded so
    line-work can be rebuilt after moving them."""

    layers: list          # template layers (densified)
    xy: np.ndarray        # (n, 2)
    layer_idx: np.ndarray
    part_idx: np.ndarray
    seq: np.ndarray
    unit: Optional[np.ndarray] = None

    @classmethod
    def from_layers(cls, layers: Sequence[Layer], max_spacing_m: float = DEFAULT_SPACING_M,
                    center=None) -> "DensePoints":
        dense = []
        for lay in layers:
            if lay.kind == "point":
                dense.append(Layer(lay.name, lay.kind, [p.copy() for p in lay.parts]))
            else:
                dense.append(Layer(lay.name, lay.kind,
                                   [densify(p, max_spacing_m, lay.closed) for p in lay.parts]))
        xy, li, pi, sq = [], [], [], []
        for i, lay in enumerate(dense):
            for j, part in enumerate(lay.parts):
                xy.append(part)
                li.append(np.full(len(part), i))
                pi.append(np.full(len(part), j))
                sq.append(np.arange(len(part)))
        if xy:
            arrays = [np.vstack(xy)] + [np.concatenate(a) for a in (li, pi, sq)]
        else:
            arrays = [np.zeros((0, 2))] + [np.zeros(0, dtype=int)] * 3
        pts = cls(dense, *arrays)
        if center is not None:
            pts.unit = unit_vectors(pts.xy, center)
        return pts

    def select(self, layer_name: str) -> np.ndarray:
        names = [lay.name for lay in self.layers]
        if layer_name not in names:
            raise CartogramError(f"no layer named {layer_name!r}")
        return self.layer_idx == names.index(layer_name)

    def rebuild(self, xy: np.ndarray) -> list:
        """Reassemble layers from moved points (same order as ``self.xy``)."""
        return rebuild(self, xy)


def rebuild(points: DensePoints, xy) -> list:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if len(xy) != len(points.xy):
        raise CartogramError("point count differs from template")
    out = []
    start = 0
    for lay in points.layers:
        parts = []
        for p in lay.parts:
            parts.append(xy[start:start + len(p)].copy())
            start += len(p)
        out.append(Layer(lay.name, lay.kind, parts))
    return out


# ---------------------------------------------------------------- steps 4-6

@dataclass
class ImpedanceSurface:
    """Scattered travel-time samples (minutes) interpolated by IDW."""

    xy: np.ndarray
    minutes: np.ndarray
    power: float = DEFAULT_IDW_POWER

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        m = np.asarray(self.minutes, dtype=float).reshape(-1)
        if len(xy) != len(m):
            raise CartogramError("sample coordinates and values differ in length")
        keep = np.isfinite(m)
        xy, m = xy[keep], m[keep]
        if len(m) == 0:
            raise CartogramError("impedance surface needs at least one finite sample")
        if (m < 0).any():
            raise CartogramError("impedance samples must be >= 0")
        if not self.power > 0:
            raise CartogramError("IDW power must be > 0")
        self.xy, self.minutes = xy, m

    def at(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        out = np.empty(len(p))
        chunk = 2048
        for s in range(0, len(p), chunk):
            q = p[s:s + chunk]
            d = np.hypot(q[:, None, 0] - self.xy[None, :, 0], q[:, None, 1] - self.xy[None, :, 1])
            hit = d < EXACT_EPS_M
            w = np.where(hit, 1.0, d) ** -self.power
            w[hit] = 0.0
            with np.errstate(invalid="ignore"):
                w /= w.sum(axis=1, keepdims=True)
            vals = (w * self.minutes).sum(axis=1)
            exact = hit.any(axis=1)
            if exact.any():
                first = np.argmax(hit[exact], axis=1)
                vals[exact] = self.minutes[first]
            out[s:s + chunk] = vals
        return out


def idw_at(surface: ImpedanceSurface, x: float, y: float) -> float:
    return float(surface.at([(x, y)])[0])


def distort(points: DensePoints, surface: ImpedanceSurface, center,
            scale_km_per_min: float) -> np.ndarray:
    """center + interpolated minutes * scale * unit vector, for every point."""
    if not scale_km_per_min > 0:
        raise CartogramError("scale must be > 0")
    c = np.asarray(center, dtype=float)
    unit = points.unit if points.unit is not None else unit_vectors(points.xy, c)
    module = surface.at(points.xy) * scale_km_per_min * 1000.0
    return c + module[:, None] * unit


def auto_scale(points: DensePoints, freeflow: ImpedanceSurface, center,
               layer_name: str = "boundary") -> float:
    """km per minute making the free-flow cartogram of ``layer_name`` as
    large, on average, as the geographic layer."""
    sel = points.select(layer_name)
    p = points.xy[sel]
    dist_km = np.hypot(p[:, 0] - center[0], p[:, 1] - center[1]).mean() / 1000.0
    minutes = freeflow.at(p).mean()
    if not (minutes > 0 and dist_km > 0):
        raise CartogramError("cannot derive a scale from a zero-size layer or zero times")
    return float(dist_km / minutes)


def isoline_radii(interval_min: float, scale_km_per_min: float, max_radius_m: float) -> list:
    """Radii (m) of the concentric travel-time circles up to ``max_radius_m``."""
    if not (interval_min > 0 and scale_km_per_min > 0):
        raise CartogramError("interval and scale must be > 0")
    step = interval_min * scale_km_per_min * 1000.0
    n = int(math.floor(max_radius_m / step + 1e-9))
    return [k * step for k in range(1, n + 1)]


# ---------------------------------------------------------------- areas

def shoelace_area(ring) -> float:
    """Absolute value of the signed shoelace sum (self-intersections allowed)."""
    p = np.asarray(ring, dtype=float).reshape(-1, 2)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)) / 2.0)


def relative_area(boundaries: Mapping, reference) -> dict:
    """Percent area of each scenario's distorted boundary w.r.t. ``reference``.

    ``boundaries`` maps scenario label to a ring or a list of rings.
    """
    def area(g):
        if isinstance(g, (list, tuple)):
            return sum(shoelace_area(r) for r in g)
        return shoelace_area(g)

    if reference not in boundaries:
        raise CartogramError(f"reference scenario {reference!r} missing")
    ref = area(boundaries[reference])
    if not ref > 0:
        raise CartogramError("reference area is zero")
    return {k: 100.0 * area(g) / ref for k, g in boundaries.items()}


# ----------------------------------------------------------------------- I/O

def read_layers(path) -> list:
    groups: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:6]] != LAYER_HEADER:
            raise CartogramError(f"{path}:1: bad header")
        for row in reader:
            if not row:
                continue
            try:
                name, part, seq = row[0], int(row[1]), int(row[2])
                x, y, kind = float(row[3]), float(row[4]), row[5].strip()
            except (ValueError, IndexError):
                raise CartogramError(f"{path}:{reader.line_num}: bad row") from None
            g = groups.setdefault(name, {"kind": kind, "parts": {}})
            if g["kind"] != kind:
                raise CartogramError(f"{path}:{reader.line_num}: layer {name} mixes kinds")
            g["parts"].setdefault(part, []).append((seq, x, y))
    layers = []
    for name, g in groups.items():
        parts = []
        for part in sorted(g["parts"]):
            pts = sorted(g["parts"][part])
            parts.append(np.array([(x, y) for _, x, y in pts]))
        layers.append(Layer(name, g["kind"], parts))
    return layers


def layer_rows(layers: Sequence[Layer]) -> list:
    rows = []
    for lay in layers:
        for j, part in enumerate(lay.parts):
            for k, (x, y) in enumerate(part):
                rows.append((lay.name, j, k, float(x), float(y), lay.kind))
    return rows


def write_layer_rows(rows, path, scenario_col: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["scenario"] if scenario_col else []) + LAYER_HEADER)
        for r in rows:
            r = list(r)
            w.writerow(r[:-3] + [repr(float(r[-3])), repr(float(r[-2])), r[-1]])


def write_layers(layers: Sequence[Layer], path) -> None:
    write_layer_rows(layer_rows(layers), path)
