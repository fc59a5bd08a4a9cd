"""Seeded synthetic city: road network, speed profiles, zones and map layers.

Stands in for proprietary network and speed-profile data.  The road graph
is a jittered lattice thinned around a random spanning tree, so every
instance is strongly connected (all links are two-way).  Two lines through
the center form a fast radial cross; every few lattice lines are arterials.
Congestion is a cosine dip in the speed fraction over a morning and an
evening window, deepest on edges near the center.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .network import (BIN_SECONDS, N_BINS, Edge, Node, RoadNetwork, SpeedProfile,
                      write_network)
from .zoning import ZoneGrid, build_grid, write_mask, write_zones

AIRPORT_CODES = ("LTN", "LCY", "SEN", "LGW", "LHR")

# (frc, free-flow km/h)
_RADIAL = (0, 96.0)
_ARTERIAL = (2, 64.0)
_LOCAL = ((4, 40.0), (5, 32.0), (6, 24.0))


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    width_m: float = 24000.0
    height_m: float = 24000.0
    node_spacing_m: float = 1000.0
    jitter: float = 0.2
    extra_link_share: float = 1.0
    arterial_every: int = 4
    cell_size_m: float = 2000.0
    study_radius_share: float = 0.4
    morning_start_h: float = 7.0
    morning_end_h: float = 10.0
    morning_depth: float = 0.35
    evening_start_h: float = 16.0
    evening_end_h: float = 19.0
    evening_depth: float = 0.3
    congestion_levels: int = 4
    unprofiled_share: float = 0.1
    opportunities_peak: float = 1000.0
    weekday: str = "Wed"
    uniform_profile: float = 0.0

    def validate(self) -> None:
        if not (self.width_m > 0 and self.height_m > 0):
            raise SynthError("extent must be positive")
        if not self.node_spacing_m > 0:
            raise SynthError("node spacing must be > 0")
        if self.n_cols < 2 or self.n_rows < 2:
            raise SynthError("spec yields fewer than 2x2 nodes")
        if not 0.0 <= self.jitter < 0.5:
            raise SynthError("jitter must be in [0, 0.5)")
        if not 0.0 <= self.extra_link_share <= 1.0:
            raise SynthError("extra_link_share must be in [0, 1]")
        for name in ("morning_depth", "evening_depth"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise SynthError(f"{name} must be in [0, 1)")
        if not (0 <= self.morning_start_h < self.morning_end_h <= 24
                and 0 <= self.evening_start_h < self.evening_end_h <= 24):
            raise SynthError("peak windows must satisfy 0 <= start < end <= 24")
        if self.congestion_levels < 1:
            raise SynthError("congestion_levels must be >= 1")
        if not 0.0 < self.study_radius_share <= 0.5:
            raise SynthError("study_radius_share must be in (0, 0.5]")
        if not 0.0 <= self.uniform_profile <= 1.5:
            raise SynthError("uniform_profile must be 0 (off) or in (0, 1.5]")
        if not self.cell_size_m > 0:
            raise SynthError("cell size must be > 0")

    @property
    def n_cols(self) -> int:
        return int(self.width_m // self.node_spacing_m) + 1

    @property
    def n_rows(self) -> int:
        return int(self.height_m // self.node_spacing_m) + 1

    @property
    def center(self) -> tuple:
        return (self.width_m / 2.0, self.height_m / 2.0)


def _bump(start_h: float, end_h: float) -> np.ndarray:
    """Cosine bump over the bin starts in [start, end], exactly 1 at the middle bin."""
    t = np.arange(N_BINS) * BIN_SECONDS / 3600.0
    mid = math.floor((start_h + end_h) / 2.0 * 12.0) / 12.0  # snap to a bin start
    out = np.zeros(N_BINS)
    rising = (t >= start_h) & (t <= mid)
    falling = (t > mid) & (t <= end_h)
    out[rising] = 0.5 * (1.0 - np.cos(math.pi * (t[rising] - start_h) / (mid - start_h))) \
        if mid > start_h else 1.0
    out[falling] = 0.5 * (1.0 + np.cos(math.pi * (t[falling] - mid) / (end_h - mid)))
    out[t == mid] = 1.0
    return out


def congestion_profile(spec: SynthSpec, level: float) -> tuple:
    """Speed fractions for a congestion level in [0, 1] (1 = full depth)."""
    if spec.uniform_profile:
        return (float(spec.uniform_profile),) * N_BINS
    dip = np.maximum(spec.morning_depth * level * _bump(spec.morning_start_h, spec.morning_end_h),
                     spec.evening_depth * level * _bump(spec.evening_start_h, spec.evening_end_h))
    return tuple(float(v) for v in 1.0 - dip)


def _spanning_links(rows: int, cols: int, rng: np.random.Generator, share: float) -> list:
    links = []
    for r in range(rows):
        for c in range(cols):
            a = r * cols + c
            if c + 1 < cols:
                links.append((a, a + 1))
            if r + 1 < rows:
                links.append((a, a + cols))
    order = rng.permutation(len(links))
    parent = list(range(rows * cols))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    tree, rest = set(), []
    for k in order:
        a, b = links[k]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            tree.add(k)
        else:
            rest.append(k)
    n_extra = int(round(share * len(rest)))
    keep = tree | set(rest[:n_extra])
    return [links[k] for k in sorted(keep)]


def _study_polygon(spec: SynthSpec, n: int = 32) -> np.ndarray:
    cx, cy = spec.center
    r = spec.study_radius_share * min(spec.width_m, spec.height_m)
    ang = 2.0 * math.pi * np.arange(n) / n
    return np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)])


def make_network(spec: SynthSpec, seed: int) -> RoadNetwork:
    spec.validate()
    rng = np.random.default_rng(seed)
    rows, cols = spec.n_rows, spec.n_cols
    sp = spec.node_spacing_m
    jit = rng.uniform(-spec.jitter, spec.jitter, size=(rows * cols, 2)) * sp
    nodes = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            x = c * sp + jit[i, 0]
            y = r * sp + jit[i, 1]
            nodes.append(Node(i + 1, round(float(x), 3), round(float(y), 3)))
    xy = np.array([(n.x, n.y) for n in nodes])

    mid_r, mid_c = rows // 2, cols // 2
    cx, cy = spec.center
    reach = 0.5 * math.hypot(spec.width_m, spec.height_m)
    levels = spec.congestion_levels
    profiles = {f"P{k}": SpeedProfile(f"P{k}", spec.weekday,
                                      congestion_profile(spec, (levels - k) / levels))
                for k in range(levels)}

    edges = []
    links = _spanning_links(rows, cols, rng, spec.extra_link_share)
    detour = rng.uniform(1.0, 1.1, size=len(links))
    local_pick = rng.integers(0, len(_LOCAL), size=len(links))
    unprof = rng.random(size=len(links)) < spec.unprofiled_share
    for k, (a, b) in enumerate(links):
        ra, ca = divmod(a, cols)
        rb, cb = divmod(b, cols)
        horizontal = ra == rb
        line = ra if horizontal else ca
        if (horizontal and line == mid_r) or (not horizontal and line == mid_c):
            frc, speed = _RADIAL
        elif line % spec.arterial_every == 0:
            frc, speed = _ARTERIAL
        else:
            frc, speed = _LOCAL[local_pick[k]]
        length = round(float(np.hypot(*(xy[a] - xy[b])) * detour[k]), 3)
        length = max(length, 1.0)
        mx, my = (xy[a] + xy[b]) / 2.0
        closeness = 1.0 - min(1.0, math.hypot(mx - cx, my - cy) / reach)
        if frc <= _ARTERIAL[0]:
            pid = "P0"
        elif unprof[k] and frc >= 5:
            pid = None
        else:
            pid = f"P{min(levels - 1, int((1.0 - closeness) * levels))}"
        for u, v in ((a, b), (b, a)):
            edges.append(Edge(len(edges) + 1, u + 1, v + 1, length, frc, speed, pid))
    used = {e.profile_id for e in edges} - {None}
    profiles = {k: p for k, p in profiles.items() if k in used}
    return RoadNetwork(nodes, edges, profiles, spec.weekday)


def make_grid(spec: SynthSpec, seed: int) -> ZoneGrid:
    rng = np.random.default_rng([seed, 1])
    cx, cy = spec.center
    scale = 0.3 * min(spec.width_m, spec.height_m)
    mask = _study_polygon(spec)

    def mass(x, y):
        base = spec.opportunities_peak * math.exp(-math.hypot(x - cx, y - cy) / scale)
        return round(base * float(rng.uniform(0.5, 1.5)), 3)

    bbox = (-spec.node_spacing_m / 2.0, -spec.node_spacing_m / 2.0,
            spec.width_m + spec.node_spacing_m / 2.0, spec.height_m + spec.node_spacing_m / 2.0)
    return build_grid(bbox, spec.cell_size_m, mass, mask=mask, center_xy=spec.center)


def make_layers(spec: SynthSpec, seed: int) -> list:
    """Reference layers: study boundary, a meandering river, airports, center.

    Returned as ``(layer, part, seq, x, y, kind)`` rows.
    """
    rng = np.random.default_rng([seed, 2])
    rows = []
    for seq, (x, y) in enumerate(_study_polygon(spec)):
        rows.append(("boundary", 0, seq, float(x), float(y), "polygon"))
    cx, cy = spec.center
    n = 24
    xs = np.linspace(0.05 * spec.width_m, 0.95 * spec.width_m, n)
    ys = cy - 0.04 * spec.height_m + 0.06 * spec.height_m * np.sin(
        np.linspace(0.0, 3.0 * math.pi, n) + rng.uniform(0.0, math.pi))
    for seq, (x, y) in enumerate(zip(xs, ys)):
        rows.append(("river", 0, seq, round(float(x), 3), round(float(y), 3), "line"))
    r_air = 0.42 * min(spec.width_m, spec.height_m)
    angles = {"LTN": 100.0, "LCY": 350.0, "SEN": 10.0, "LGW": 260.0, "LHR": 190.0}
    for part, code in enumerate(AIRPORT_CODES):
        rad = math.radians(angles[code])
        rr = r_air * (0.25 if code == "LCY" else 1.0)
        rows.append((f"airport:{code}", part, 0, round(cx + rr * math.cos(rad), 3),
                     round(cy + rr * math.sin(rad), 3), "point"))
    rows.append(("center", 0, 0, cx, cy, "point"))
    return rows


def generate_synthetic(spec: SynthSpec, seed: int, out_dir) -> tuple:
    """Write nodes/edges/profiles/zones/mask/layers CSVs into ``out_dir``.

    Output is a pure function of ``(spec, seed)``.  Returns the network and
    the (unsnapped) zone grid.
    """
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = make_network(spec, seed)
    grid = make_grid(spec, seed)
    if not grid.zones:
        raise SynthError("spec yields no zones")
    write_network(net, out / "nodes.csv", out / "edges.csv", out / "profiles.csv")
    write_zones(grid, out / "zones.csv")
    write_mask(_study_polygon(spec), out / "mask.csv")
    from .cartogram import write_layer_rows
    write_layer_rows(make_layers(spec, seed), out / "layers.csv")
    with open(out / "synth_spec.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in asdict(spec).items():
            w.writerow([k, v])
        w.writerow(["seed", seed])
        w.writerow(["center_zone_id", grid.center_zone_id])
    return net, grid
