"""Brute-force references and small-network builders shared by the tests.

Nothing here touches tdaccess routing internals: edge costs come straight
from edge length, free-flow speed and raw profile bins.
"""

import math
import random

from tdaccess.network import Edge, Node, RoadNetwork, SpeedProfile
from tdaccess.zoning import Zone, ZoneGrid

DAY = 86400.0
BIN = 300.0
NB = 288


def flat(value=1.0):
    return (value,) * NB


def two_level(a, b, k1, k2):
    """Value ``a`` on bins [k1, k2), ``b`` elsewhere."""
    return tuple(a if k1 <= k < k2 else b for k in range(NB))


def make_network(nodes, edges, profiles=None, weekday="Wed"):
    """nodes: [(id, x, y)]; edges: [(id, u, v, length, kmh, profile_id or None)]."""
    profiles = profiles or {}
    return RoadNetwork(
        [Node(i, float(x), float(y)) for i, x, y in nodes],
        [Edge(i, u, v, float(length), 4, float(kmh), pid) for i, u, v, length, kmh, pid in edges],
        {pid: SpeedProfile(pid, weekday, bins) for pid, bins in profiles.items()},
        weekday,
    )


def node_grid(network, cell=1000.0):
    """One internal zone per node, zone id = node id, opportunities 10 + id."""
    zones = [Zone(n.id, 0, k, n.x, n.y, 10.0 + n.id, False, n.id)
             for k, n in enumerate(network.nodes)]
    return ZoneGrid(cell, tuple(zones), zones[0].zone_id)


def random_network(rng: random.Random, max_nodes=8, max_edges=20, p_unprofiled=0.25):
    """Small random digraph with two-level profiles, tuned to produce
    overtaking (long slow links crossing bin boundaries)."""
    n = rng.randint(2, max_nodes)
    nodes = [(i + 1, rng.uniform(0, 5000), rng.uniform(0, 5000)) for i in range(n)]
    m = rng.randint(1, max_edges)
    profiles, edges = {}, []
    for k in range(m):
        u = rng.randint(1, n)
        v = rng.randint(1, n - 1)
        v = v + 1 if v >= u else v
        length = rng.choice([rng.uniform(50, 3000), rng.uniform(5000, 60000)])
        kmh = rng.uniform(10, 110)
        pid = None
        if rng.random() >= p_unprofiled:
            pid = f"p{k}"
            k1 = rng.randrange(NB)
            k2 = rng.randrange(k1 + 1, NB + 1)
            profiles[pid] = two_level(rng.uniform(0.05, 1.5), rng.uniform(0.05, 1.5), k1, k2)
        edges.append((k + 1, u, v, length, kmh, pid))
    return make_network(nodes, edges, profiles)


class EnumerationOracle:
    """Earliest arrivals by exhaustive simple-path enumeration.

    Each link may be entered immediately or after waiting for a later bin;
    only the instants where the link's profile changes value can beat
    entering right away, so those are the only waits tried.
    """

    def __init__(self, network):
        self.net = network
        self.out = {}
        self.cost = {}
        for e in network.edges:
            self.out.setdefault(e.from_node, []).append(e)
            if e.profile_id is None:
                self.cost[e.id] = (None, e.length_m / 1000.0 / e.freeflow_kmh * 3600.0)
                continue
            bins = network.profiles[e.profile_id].bins
            tau = [e.length_m / 1000.0 / (e.freeflow_kmh * b) * 3600.0 for b in bins]
            runs = [k for k in range(NB) if bins[k] != bins[k - 1]]
            self.cost[e.id] = (tau, runs)

    def edge_arrival(self, e, t):
        tau, runs = self.cost[e.id]
        if tau is None:
            return t + runs
        day = math.floor(t / DAY)
        tm = t - day * DAY
        best = t + tau[int(tm // BIN)]
        for d in (day, day + 1):
            for k in runs:
                start = d * DAY + k * BIN
                if t < start <= t + DAY:
                    best = min(best, start + tau[k])
        return best

    def earliest(self, source, t0):
        best = {source: t0}
        visited = {source}

        def walk(u, t):
            for e in self.out.get(u, ()):
                v = e.to_node
                if v in visited:
                    continue
                a = self.edge_arrival(e, t)
                if a < best.get(v, math.inf):
                    best[v] = a
                visited.add(v)
                walk(v, a)
                visited.discard(v)

        walk(source, t0)
        return best

    def minutes(self, source, t0):
        return {v: (a - t0) / 60.0 for v, a in self.earliest(source, t0).items()}


def static_dijkstra_minutes(network, source):
    """Free-flow shortest minutes via scipy, for flat-profile checks."""
    import numpy as np
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    idx = {n.id: i for i, n in enumerate(network.nodes)}
    n = len(idx)
    best = {}
    for e in network.edges:
        key = (idx[e.from_node], idx[e.to_node])
        w = e.length_m / 1000.0 / e.freeflow_kmh * 60.0
        best[key] = min(best.get(key, math.inf), w)
    if best:
        r, c = zip(*best)
        g = coo_matrix((list(best.values()), (r, c)), shape=(n, n)).tocsr()
    else:
        g = coo_matrix((n, n)).tocsr()
    d = dijkstra(g, directed=True, indices=idx[source])
    return {nid: float(d[i]) for nid, i in idx.items() if np.isfinite(d[i])}
