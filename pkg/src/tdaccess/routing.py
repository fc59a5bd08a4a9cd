"""Time-dependent earliest-arrival search and the origin x destination x slot cost cube."""

from __future__ import annotations

import csv
import heapq
import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .network import BIN_SECONDS, DAY_SECONDS, N_BINS, Instant, RoadNetwork, fifoize
from .zoning import ZoneGrid

log = logging.getLogger(__name__)

CUBE_MAGIC = b"TDC1"
DEFAULT_INTERVAL_S = 900.0
INF = math.inf


class RoutingError(ValueError):
    pass


@dataclass(frozen=True)
class SlotSchedule:
    """Departure slots ``index * interval`` for ``index`` in ``range(count)``."""

    count: int = 96
    interval_s: float = DEFAULT_INTERVAL_S

    def __post_init__(self):
        if self.count < 1:
            raise RoutingError("slot count must be >= 1")
        if not self.interval_s > 0:
            raise RoutingError("slot interval must be > 0")
        if self.count * self.interval_s > DAY_SECONDS + 1e-9:
            raise RoutingError("slots must fit within one day")

    @classmethod
    def full_day(cls, interval_s: float = DEFAULT_INTERVAL_S) -> "SlotSchedule":
        n = DAY_SECONDS / interval_s
        if abs(n - round(n)) > 1e-9:
            raise RoutingError(f"interval {interval_s} s does not divide a day")
        return cls(int(round(n)), interval_s)

    @property
    def seconds(self) -> tuple:
        return tuple(i * self.interval_s for i in range(self.count))

    def instant(self, index: int) -> Instant:
        return Instant(index * self.interval_s)

    def label(self, index: int) -> str:
        return str(self.instant(index))


@dataclass
class SearchLabels:
    """Per-node result of one search, in ``network.nodes`` order.

    ``elapsed`` holds seconds since departure (+inf if unreached);
    ``pred_edge`` is the edge id used to reach the node, -1 for the source
    or unreached.
    """

    node_ids: tuple
    depart_s: float
    elapsed: np.ndarray
    pred_edge: np.ndarray

    @property
    def arrival(self) -> np.ndarray:
        """Absolute seconds from the departure day's midnight (may pass 86400)."""
        return self.depart_s + self.elapsed

    def minutes(self, node_id: Optional[int] = None):
        m = self.elapsed / 60.0
        if node_id is None:
            return m
        return float(m[self.node_ids.index(node_id)])

    def path_edges(self, node_id: int, network: RoadNetwork) -> list:
        """Edge ids from the source to ``node_id`` (empty if unreachable)."""
        idx = network.node_index
        i = idx[node_id]
        if not math.isfinite(self.elapsed[i]):
            return []
        out = []
        while self.pred_edge[i] >= 0:
            eid = int(self.pred_edge[i])
            out.append(eid)
            i = idx[network.edges[network.edge_index[eid]].from_node]
        return out[::-1]


class _Graph:
    """Flat, list-based view of a fifoized network for the search loop."""

    def __init__(self, network: RoadNetwork):
        if not network.fifo:
            network = fifoize(network)
        idx = network.node_index
        self.n = len(network.nodes)
        adj = [[] for _ in range(self.n)]
        for pos, e in enumerate(network.edges):
            adj[idx[e.from_node]].append((idx[e.to_node], pos * N_BINS, pos))
        self.adj = adj
        self.tau = network.tau_table.ravel().tolist()
        self.nxt = network.next_arrival.ravel().tolist()
        self.edge_ids = [e.id for e in network.edges]

    def search(self, src: int, t0: float):
        """Elapsed seconds since ``t0`` per node, and predecessor edge positions.

        Labels are kept relative to the departure so a time-invariant
        network gives bit-identical results for every departure.
        """
        n = self.n
        adj, tau, nxt = self.adj, self.tau, self.nxt
        arr = [INF] * n
        pred = [-1] * n
        done = [False] * n
        arr[src] = 0.0
        heap = [(0.0, src)]
        pop, push = heapq.heappop, heapq.heappush
        while heap:
            e, u = pop(heap)
            if done[u]:
                continue
            done[u] = True
            t = t0 + e
            tm = t % DAY_SECONDS
            day = t - tm  # exact multiple of 86400
            k = int(tm // BIN_SECONDS)
            for v, base, pos in adj[u]:
                if done[v]:
                    continue
                j = base + k
                # drive now, or wait for a later bin; both are monotone in e
                a = e + tau[j]
                w = (day + nxt[j]) - t0
                if w < a:
                    a = w
                if a < arr[v]:
                    arr[v] = a
                    pred[v] = pos
                    push(heap, (a, v))
        return arr, pred


def one_to_all_td(network: RoadNetwork, source_node: int,
                  depart: Union[Instant, float]) -> SearchLabels:
    """Earliest-arrival labels from ``source_node`` leaving at ``depart``.

    Label-setting search; exact because the network is used in its
    non-overtaking (fifoized) form.  Unreached nodes get +inf.
    """
    try:
        src = network.node_index[source_node]
    except KeyError:
        raise RoutingError(f"unknown source node {source_node}") from None
    t0 = depart.seconds if isinstance(depart, Instant) else Instant(depart).seconds
    g = _Graph(network)
    arr, pred = g.search(src, t0)
    pred_ids = np.array([g.edge_ids[p] if p >= 0 else -1 for p in pred], dtype=np.int64)
    return SearchLabels(tuple(n.id for n in network.nodes), t0,
                        np.array(arr, dtype=float), pred_ids)


# ------------------------------------------------------------------ the cube

@dataclass
class CostCube:
    """Travel minutes indexed ``values[slot, origin, destination]``."""

    values: np.ndarray
    origin_ids: tuple
    dest_ids: tuple
    slot_seconds: tuple

    def __post_init__(self):
        s, o, d = self.values.shape
        if o != len(self.origin_ids) or d != len(self.dest_ids) or s != len(self.slot_seconds):
            raise RoutingError(
                f"cube shape {self.values.shape} does not match "
                f"{len(self.slot_seconds)} slots x {len(self.origin_ids)} origins x "
                f"{len(self.dest_ids)} destinations")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def unreachable(self) -> int:
        return int(np.isinf(self.values).sum())

    def origin_pos(self, zone_id: int) -> int:
        try:
            return self.origin_ids.index(zone_id)
        except ValueError:
            raise RoutingError(f"zone {zone_id} is not an origin of the cube") from None

    def dest_pos(self, zone_id: int) -> int:
        try:
            return self.dest_ids.index(zone_id)
        except ValueError:
            raise RoutingError(f"zone {zone_id} is not a destination of the cube") from None


_worker_graph: Optional[_Graph] = None


def _init_worker(network: RoadNetwork) -> None:
    global _worker_graph
    _worker_graph = _Graph(network)


def _origin_rows(task) -> np.ndarray:
    src, dest_idx, slot_seconds, self_pos = task
    g = _worker_graph
    out = np.empty((len(slot_seconds), len(dest_idx)))
    for s, t0 in enumerate(slot_seconds):
        arr, _ = g.search(src, t0)
        out[s] = [arr[j] / 60.0 for j in dest_idx]
        if self_pos is not None:
            out[s, self_pos] = 0.0
    return out


def build_cost_cube(network: RoadNetwork, grid: ZoneGrid,
                    slots: Union[SlotSchedule, Sequence[float], None] = None,
                    workers: int = 1) -> CostCube:
    """One search per (internal origin, slot); destinations are all zones.

    Work is split by origin; rows are written back by position, so the cube
    does not depend on ``workers``.
    """
    if slots is None:
        slots = SlotSchedule()
    slot_seconds = tuple(slots.seconds) if isinstance(slots, SlotSchedule) else tuple(
        Instant(s).seconds for s in slots)
    if any(z.snap_node is None for z in grid.zones):
        raise RoutingError("grid must be snapped before routing")
    idx = network.node_index
    dests = grid.zones
    origins = grid.internal
    dest_idx = [idx[z.snap_node] for z in dests]
    dest_pos = {z.zone_id: k for k, z in enumerate(dests)}
    tasks = [(idx[z.snap_node], dest_idx, slot_seconds, dest_pos.get(z.zone_id)) for z in origins]
    values = np.empty((len(slot_seconds), len(origins), len(dests)))

    fifo_net = fifoize(network)
    if workers <= 1 or len(tasks) <= 1:
        _init_worker(fifo_net)
        results = map(_origin_rows, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                   initargs=(fifo_net,))
        results = pool.map(_origin_rows, tasks, chunksize=max(1, len(tasks) // (4 * workers)))
    try:
        for o, rows in enumerate(results):
            values[:, o, :] = rows
    finally:
        if workers > 1 and len(tasks) > 1:
            pool.shutdown()

    cube = CostCube(values, tuple(z.zone_id for z in origins),
                    tuple(z.zone_id for z in dests), slot_seconds)
    if cube.unreachable:
        log.warning("%d unreachable (slot, origin, destination) entries", cube.unreachable)
    return cube


def freeflow_network(network: RoadNetwork) -> RoadNetwork:
    """Copy of ``network`` with every profile removed (free-flow speeds always)."""
    edges = tuple(replace(e, profile_id=None) for e in network.edges)
    return RoadNetwork(network.nodes, edges, {}, network.weekday)


def build_freeflow_cube(network: RoadNetwork, grid: ZoneGrid, workers: int = 1) -> CostCube:
    """Single-scenario cube with every edge at free-flow speed."""
    return build_cost_cube(freeflow_network(network), grid, [0.0], workers)


@dataclass(frozen=True)
class CenterTimes:
    """Travel minutes to and from the center zone, per slot."""

    center_zone_id: int
    from_center: np.ndarray  # (S, D) over cube.dest_ids
    to_center: np.ndarray    # (S, O) over cube.origin_ids
    dest_ids: tuple
    origin_ids: tuple


def to_center_column(cube: CostCube, center_zone_id: int) -> CenterTimes:
    """Extract the center row (trips leaving the center) and the center
    column (trips heading to it), both with departure at the slot instant."""
    if center_zone_id not in cube.origin_ids or center_zone_id not in cube.dest_ids:
        raise RoutingError(f"center zone {center_zone_id} missing from cube")
    o = cube.origin_pos(center_zone_id)
    d = cube.dest_pos(center_zone_id)
    return CenterTimes(center_zone_id, cube.values[:, o, :].copy(), cube.values[:, :, d].copy(),
                       cube.dest_ids, cube.origin_ids)


# ----------------------------------------------------------------------- I/O

def write_cube(cube: CostCube, path) -> None:
    """Little-endian ``TDC1`` header, u32 S, O, D, then f32 minutes."""
    s, o, d = cube.values.shape
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<III", s, o, d))
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())


def read_cube(path, origin_ids: Optional[Sequence[int]] = None,
              dest_ids: Optional[Sequence[int]] = None,
              slot_seconds: Optional[Sequence[float]] = None) -> CostCube:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != CUBE_MAGIC:
            raise RoutingError(f"{path}: not a TDC1 cube file")
        s, o, d = struct.unpack("<III", head[4:])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != s * o * d:
        raise RoutingError(f"{path}: expected {s * o * d} values, found {data.size}")
    origin_ids = tuple(range(o)) if origin_ids is None else tuple(origin_ids)
    dest_ids = tuple(range(d)) if dest_ids is None else tuple(dest_ids)
    if slot_seconds is None:
        slot_seconds = tuple(i * DAY_SECONDS / s for i in range(s))
    if len(origin_ids) != o or len(dest_ids) != d:
        raise RoutingError(
            f"{path}: cube is {o} origins x {d} destinations, zones give "
            f"{len(origin_ids)} x {len(dest_ids)}")
    return CostCube(data.reshape(s, o, d).astype(float), origin_ids, dest_ids, tuple(slot_seconds))


def write_cube_csv(cube: CostCube, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "origin", "destination", "minutes"])
        for s in range(cube.values.shape[0]):
            for o, oid in enumerate(cube.origin_ids):
                for d, did in enumerate(cube.dest_ids):
                    w.writerow([s, oid, did, repr(float(cube.values[s, o, d]))])
