"""Time-dependent road network: data model, CSV ingest and per-edge timing.

Speeds come from 5-minute speed profiles expressed as fractions of the
edge's free-flow speed.  A link is traversed entirely at the speed of the
bin in which it is entered (frozen-entry model).  Times are handled
internally in seconds; the public timing helpers return minutes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np

DAY_SECONDS = 86400.0
BIN_SECONDS = 300.0
N_BINS = 288
MAX_FRC = 6
MAX_PROFILE_VALUE = 1.5
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")

PathLike = Union[str, Path]


class NetworkError(ValueError):
    """Invalid network content (dangling reference, bad value, bad file)."""


@dataclass(frozen=True, order=True)
class Instant:
    """Time of day in seconds, normalised cyclically into [0, 86400)."""

    seconds: float

    def __post_init__(self):
        s = float(self.seconds)
        if not math.isfinite(s):
            raise ValueError(f"instant must be finite, got {self.seconds!r}")
        s = s % DAY_SECONDS
        if s >= DAY_SECONDS:  # -1e-20 % 86400 rounds up to 86400.0
            s = 0.0
        object.__setattr__(self, "seconds", s)

    @classmethod
    def hm(cls, hours: int, minutes: float = 0.0) -> "Instant":
        return cls(hours * 3600.0 + minutes * 60.0)

    @property
    def bin(self) -> int:
        return int(self.seconds // BIN_SECONDS)

    def __str__(self) -> str:
        total = int(round(self.seconds))
        return f"{total // 3600:02d}:{total % 3600 // 60:02d}"


def _seconds(t: Union[Instant, float]) -> float:
    return t.seconds if isinstance(t, Instant) else Instant(t).seconds


@dataclass(frozen=True)
class Node:
    id: int
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise NetworkError(f"node {self.id}: non-finite coordinates")


@dataclass(frozen=True)
class SpeedProfile:
    """288 five-minute speed fractions for one weekday."""

    id: str
    weekday: str
    bins: tuple

    def __post_init__(self):
        if self.weekday not in WEEKDAYS:
            raise NetworkError(f"profile {self.id}: unknown weekday {self.weekday!r}")
        bins = tuple(float(b) for b in self.bins)
        if len(bins) != N_BINS:
            raise NetworkError(
                f"profile {self.id}: profile bin count ≠ {N_BINS} (got {len(bins)})"
            )
        for k, b in enumerate(bins):
            if not (0.0 < b <= MAX_PROFILE_VALUE):
                raise NetworkError(
                    f"profile {self.id}: bin {k} value {b!r} outside (0, {MAX_PROFILE_VALUE}]"
                )
        object.__setattr__(self, "bins", bins)


@dataclass(frozen=True)
class Edge:
    id: int
    from_node: int
    to_node: int
    length_m: float
    frc: int
    freeflow_kmh: float
    profile_id: Optional[str] = None

    def __post_init__(self):
        if not (self.length_m > 0 and math.isfinite(self.length_m)):
            raise NetworkError(f"edge {self.id}: non-positive length {self.length_m!r}")
        if not (self.freeflow_kmh > 0 and math.isfinite(self.freeflow_kmh)):
            raise NetworkError(f"edge {self.id}: non-positive speed {self.freeflow_kmh!r}")
        if not 0 <= self.frc <= MAX_FRC:
            raise NetworkError(f"edge {self.id}: frc {self.frc} outside 0..{MAX_FRC}")


@dataclass(frozen=True)
class RoadNetwork:
    """Directed road graph for a single weekday.

    Immutable; derived routing arrays are computed lazily and cached.
    ``fifo`` is set by :func:`fifoize` and switches traversal times to the
    waiting-permitted (non-overtaking) form.
    """

    nodes: tuple
    edges: tuple
    profiles: Mapping[str, SpeedProfile]
    weekday: str = "Wed"
    fifo: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "profiles", dict(self.profiles))
        if self.weekday not in WEEKDAYS:
            raise NetworkError(f"unknown weekday {self.weekday!r}")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate node ids")
        known = set(ids)
        seen_edges = set()
        for e in self.edges:
            if e.id in seen_edges:
                raise NetworkError(f"duplicate edge id {e.id}")
            seen_edges.add(e.id)
            for end in (e.from_node, e.to_node):
                if end not in known:
                    raise NetworkError(f"edge {e.id} references unknown node {end}")
            if e.profile_id is not None and e.profile_id not in self.profiles:
                raise NetworkError(f"edge {e.id} references unknown profile {e.profile_id}")

    __hash__ = None

    @cached_property
    def node_index(self) -> dict:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @cached_property
    def edge_index(self) -> dict:
        return {e.id: i for i, e in enumerate(self.edges)}

    @cached_property
    def node_xy(self) -> np.ndarray:
        return np.array([(n.x, n.y) for n in self.nodes], dtype=float).reshape(-1, 2)

    @cached_property
    def speed_table(self) -> np.ndarray:
        """(E, 288) effective speed in km/h per entry bin."""
        table = np.empty((len(self.edges), N_BINS))
        for i, e in enumerate(self.edges):
            if e.profile_id is None:
                table[i] = e.freeflow_kmh
            else:
                table[i] = e.freeflow_kmh * np.asarray(self.profiles[e.profile_id].bins)
        return table

    @cached_property
    def tau_table(self) -> np.ndarray:
        """(E, 288) frozen-entry traversal seconds per entry bin."""
        lengths = np.array([e.length_m for e in self.edges], dtype=float).reshape(-1, 1)
        return lengths / 1000.0 / self.speed_table * 3600.0

    @cached_property
    def next_arrival(self) -> np.ndarray:
        """(E, 288) earliest in-day arrival if the edge is entered at or after
        the start of bin k+1 (cyclic; values for bin 287 refer to the next day).
        Only meaningful for fifo networks."""
        tau = self.tau_table
        starts = np.arange(2 * N_BINS) * BIN_SECONDS
        arr = starts + np.concatenate([tau, tau], axis=1)
        best = np.minimum.accumulate(arr[:, ::-1], axis=1)[:, ::-1][:, 1:N_BINS + 1].copy()
        # waiting never pays on a time-invariant link; +inf keeps it out of the min
        best[(tau == tau[:, :1]).all(axis=1)] = np.inf
        return best

    @cached_property
    def freeflow_seconds(self) -> np.ndarray:
        return np.array([e.length_m / 1000.0 / e.freeflow_kmh * 3600.0 for e in self.edges])


def _edge_pos(network: RoadNetwork, edge: Union[Edge, int]) -> int:
    eid = edge.id if isinstance(edge, Edge) else edge
    try:
        return network.edge_index[eid]
    except KeyError:
        raise NetworkError(f"unknown edge {eid}") from None


def edge_speed_at(network: RoadNetwork, edge: Union[Edge, int], entry: Union[Instant, float]) -> float:
    """Effective speed (km/h) of ``edge`` for a vehicle entering at ``entry``."""
    i = _edge_pos(network, edge)
    return float(network.speed_table[i, int(_seconds(entry) // BIN_SECONDS)])


def _arrival(network: RoadNetwork, i: int, t_abs: float) -> float:
    tm = t_abs % DAY_SECONDS
    k = int(tm // BIN_SECONDS)
    a = t_abs + float(network.tau_table[i, k])
    if network.fifo:
        # (t_abs - tm) is an exact multiple of a day, so this stays monotone in t_abs
        a = min(a, (t_abs - tm) + float(network.next_arrival[i, k]))
    return a


def traversal_seconds(network: RoadNetwork, i: int, t: float) -> float:
    """Traversal seconds of edge position ``i`` entered at in-day second ``t``."""
    return _arrival(network, i, t) - t


def edge_traversal_time(network: RoadNetwork, edge: Union[Edge, int], entry: Union[Instant, float]) -> float:
    """Minutes needed to traverse ``edge`` when entering at ``entry``.

    On a fifoized network this includes any beneficial wait before entry.
    """
    return traversal_seconds(network, _edge_pos(network, edge), _seconds(entry)) / 60.0


def fifoize(network: RoadNetwork) -> RoadNetwork:
    """Return the non-overtaking version of ``network``.

    The edge arrival function a(m) = m + tau(m) is replaced by
    min over m' >= m of a(m'), which is what a driver allowed to wait
    before entering the link would experience.  At bin starts this is the
    backward running minimum of the bin-start arrivals, anchored cyclically
    across midnight.
    """
    if network.fifo:
        return network
    return replace(network, fifo=True)


def arrival_at(network: RoadNetwork, edge: Union[Edge, int], t_abs: float) -> float:
    """Absolute arrival second for an absolute entry second (days allowed)."""
    return _arrival(network, _edge_pos(network, edge), float(t_abs))


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class NetworkStats:
    km_by_frc: dict
    profiled_km_by_frc: dict
    total_km: float
    profiled_km: float
    profiled_pct: float
    n_nodes: int
    n_edges: int
    strongly_connected: bool

    def rows(self) -> list:
        out = []
        for frc in sorted(self.km_by_frc):
            km = self.km_by_frc[frc]
            pkm = self.profiled_km_by_frc.get(frc, 0.0)
            out.append((frc, km, pkm, 100.0 * pkm / km if km else 0.0))
        return out


def network_stats(network: RoadNetwork) -> NetworkStats:
    """Km of directed edges per FRC class and share of km carrying a profile.

    Each direction is a separate edge, so two-way roads count double.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    km_by_frc: dict = {}
    prof_by_frc: dict = {}
    for e in network.edges:
        km_by_frc[e.frc] = km_by_frc.get(e.frc, 0.0) + e.length_m / 1000.0
        if e.profile_id is not None:
            prof_by_frc[e.frc] = prof_by_frc.get(e.frc, 0.0) + e.length_m / 1000.0
    total = sum(km_by_frc.values())
    profiled = sum(prof_by_frc.values())

    n = len(network.nodes)
    if n == 0:
        strong = False
    else:
        idx = network.node_index
        rows = [idx[e.from_node] for e in network.edges]
        cols = [idx[e.to_node] for e in network.edges]
        g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
        strong = connected_components(g, directed=True, connection="strong")[0] == 1
    return NetworkStats(
        km_by_frc=dict(sorted(km_by_frc.items())),
        profiled_km_by_frc=dict(sorted(prof_by_frc.items())),
        total_km=total,
        profiled_km=profiled,
        profiled_pct=100.0 * profiled / total if total else 0.0,
        n_nodes=n,
        n_edges=len(network.edges),
        strongly_connected=bool(strong),
    )


# ----------------------------------------------------------------------- I/O

NODE_HEADER = ["node_id", "x_m", "y_m"]
EDGE_HEADER = ["edge_id", "from_node", "to_node", "length_m", "frc", "freeflow_kmh", "profile_id"]
PROFILE_HEADER = ["profile_id", "weekday"] + [f"b{k:03d}" for k in range(N_BINS)]


def _fmt(v: float) -> str:
    return repr(float(v))


def _read_rows(path: PathLike, header: list, prefix_only: bool = False) -> Iterable[tuple]:
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise NetworkError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        got = None if first is None else [c.strip() for c in first]
        if got is None or (got[:len(header)] if prefix_only else got) != header:
            shown = first if first is None or len(first) < 10 else first[:4] + ["..."]
            raise NetworkError(f"{path}:1: bad header {shown}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            yield reader.line_num, row


def _parse(path, lineno, fn, value, what):
    try:
        return fn(value)
    except (TypeError, ValueError):
        raise NetworkError(f"{path}:{lineno}: cannot parse {what} {value!r}") from None


def _wrap(path, lineno, make):
    try:
        return make()
    except NetworkError as exc:
        raise NetworkError(f"{path}:{lineno}: {exc}") from None


def read_nodes(path: PathLike) -> list:
    out = []
    for ln, row in _read_rows(path, NODE_HEADER):
        if len(row) != 3:
            raise NetworkError(f"{path}:{ln}: expected 3 fields, got {len(row)}")
        nid = _parse(path, ln, int, row[0], "node_id")
        x = _parse(path, ln, float, row[1], "x_m")
        y = _parse(path, ln, float, row[2], "y_m")
        out.append(_wrap(path, ln, lambda: Node(nid, x, y)))
    return out


def read_edges(path: PathLike) -> list:
    out = []
    for ln, row in _read_rows(path, EDGE_HEADER):
        if len(row) != 7:
            raise NetworkError(f"{path}:{ln}: expected 7 fields, got {len(row)}")
        vals = (
            _parse(path, ln, int, row[0], "edge_id"),
            _parse(path, ln, int, row[1], "from_node"),
            _parse(path, ln, int, row[2], "to_node"),
            _parse(path, ln, float, row[3], "length_m"),
            _parse(path, ln, int, row[4], "frc"),
            _parse(path, ln, float, row[5], "freeflow_kmh"),
            row[6].strip() or None,
        )
        out.append(_wrap(path, ln, lambda: Edge(*vals)))
    return out


def read_profiles(path: PathLike) -> list:
    out = []
    # bin columns are checked per row, so a short profile gets a clear message
    for ln, row in _read_rows(path, PROFILE_HEADER[:2], prefix_only=True):
        if len(row) != 2 + N_BINS:
            raise NetworkError(
                f"{path}:{ln}: profile bin count ≠ {N_BINS} (got {len(row) - 2})")
        bins = tuple(_parse(path, ln, float, v, f"bin {k}") for k, v in enumerate(row[2:]))
        out.append(_wrap(path, ln, lambda: SpeedProfile(row[0].strip(), row[1].strip(), bins)))
    return out


def load_network(node_file: PathLike, edge_file: PathLike, profile_file: Optional[PathLike],
                 weekday: str = "Wed") -> RoadNetwork:
    """Read and validate a network from the three CSV files.

    Only profiles for ``weekday`` are kept; a profile id that exists only for
    other weekdays counts as unknown.
    """
    nodes = read_nodes(node_file)
    edges = read_edges(edge_file)
    profiles = {}
    if profile_file is not None:
        for p in read_profiles(profile_file):
            if p.weekday != weekday:
                continue
            if p.id in profiles:
                raise NetworkError(f"{profile_file}: duplicate profile {p.id} for {weekday}")
            profiles[p.id] = p
    return RoadNetwork(nodes, edges, profiles, weekday)


def write_network(network: RoadNetwork, node_file: PathLike, edge_file: PathLike,
                  profile_file: PathLike) -> None:
    with open(node_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_HEADER)
        for n in network.nodes:
            w.writerow([n.id, _fmt(n.x), _fmt(n.y)])
    with open(edge_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_HEADER)
        for e in network.edges:
            w.writerow([e.id, e.from_node, e.to_node, _fmt(e.length_m), e.frc,
                        _fmt(e.freeflow_kmh), e.profile_id or ""])
    with open(profile_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for pid in sorted(network.profiles):
            p = network.profiles[pid]
            w.writerow([p.id, p.weekday] + [_fmt(b) for b in p.bins])
