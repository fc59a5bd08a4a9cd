import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (EnumerationOracle, flat, make_network, node_grid, random_network,
                     static_dijkstra_minutes, two_level)
from tdaccess.network import Instant, edge_traversal_time
from tdaccess.routing import (CostCube, RoutingError, SlotSchedule, build_cost_cube,
                              build_freeflow_cube, one_to_all_td, read_cube, to_center_column,
                              write_cube, write_cube_csv)
from tdaccess.zoning import Zone, ZoneGrid


def test_slots_default():
    s = SlotSchedule.full_day()
    assert s.count == 96 and s.interval_s == 900.0
    assert s.label(34) == "08:30"
    with pytest.raises(RoutingError):
        SlotSchedule.full_day(7 * 60.0)
    with pytest.raises(RoutingError):
        SlotSchedule(97, 900.0)


def test_source_to_itself():
    net = make_network([(1, 0, 0)], [])
    assert one_to_all_td(net, 1, Instant.hm(8)).minutes(1) == 0.0


@pytest.mark.parametrize("depart", [0.0, 3600 * 8.0, 86399.0])
def test_single_edge(depart):
    net = make_network([(1, 0, 0), (2, 1000, 0)], [(1, 1, 2, 1000, 50, "p")], {"p": flat()})
    lab = one_to_all_td(net, 1, depart)
    assert lab.minutes(2) == pytest.approx(1.2, abs=1e-12)
    assert lab.path_edges(2, net) == [1]
    assert math.isinf(one_to_all_td(net, 2, depart).minutes(1))


def diamond():
    # direct 1->3 crawls before 08:00; via 2 crawls from 08:00 on
    before = two_level(0.2, 1.0, 0, 96)
    after = two_level(0.2, 1.0, 96, 288)
    return make_network([(1, 0, 0), (2, 500, 500), (3, 1000, 0)],
                        [(1, 1, 3, 1500, 60, "before"),
                         (2, 1, 2, 1000, 60, "after"), (3, 2, 3, 1000, 60, "after")],
                        {"before": before, "after": after})


def test_diamond_flip():
    net = diamond()
    oracle = EnumerationOracle(net)
    early = one_to_all_td(net, 1, Instant.hm(7))
    late = one_to_all_td(net, 1, Instant.hm(9))
    assert early.path_edges(3, net) == [2, 3]
    assert late.path_edges(3, net) == [1]
    assert early.minutes(3) == pytest.approx(oracle.minutes(1, 7 * 3600.0)[3], abs=1e-9)
    assert late.minutes(3) == pytest.approx(oracle.minutes(1, 9 * 3600.0)[3], abs=1e-9)
    assert early.minutes(3) == pytest.approx(2.0)
    assert late.minutes(3) == pytest.approx(1.5)


def _compare_with_oracle(net, slots):
    cube = build_cost_cube(net, node_grid(net), slots)
    oracle = EnumerationOracle(net)
    worst = 0.0
    for o, oid in enumerate(cube.origin_ids):
        for s, t0 in enumerate(cube.slot_seconds):
            expect = oracle.minutes(oid, t0)
            for d, did in enumerate(cube.dest_ids):
                e = expect.get(did, math.inf)
                g = cube.values[s, o, d]
                if math.isinf(e) or math.isinf(g):
                    assert e == g, (oid, did, s)
                else:
                    worst = max(worst, abs(e - g))
    return worst


def test_oracle_random_networks():
    rng = random.Random(123)
    for _ in range(40):
        assert _compare_with_oracle(random_network(rng), SlotSchedule(8, 10800.0)) <= 1e-9


def test_oracle_departures_off_grid():
    rng = random.Random(5)
    net = random_network(rng, max_nodes=6, max_edges=14)
    departs = [rng.uniform(0, 86400) for _ in range(6)] + [86399.999, 299.9999, 300.0]
    assert _compare_with_oracle(net, departs) <= 1e-9


def test_flat_profiles_equal_static_dijkstra():
    rng = random.Random(9)
    for _ in range(10):
        base = random_network(rng)
        net = make_network([(n.id, n.x, n.y) for n in base.nodes],
                           [(e.id, e.from_node, e.to_node, e.length_m, e.freeflow_kmh,
                             "flat" if e.profile_id else None) for e in base.edges],
                           {"flat": flat()})
        cube = build_cost_cube(net, node_grid(net), SlotSchedule(4, 21600.0))
        assert np.array_equal(cube.values[0], cube.values[3])
        for o, oid in enumerate(cube.origin_ids):
            ref = static_dijkstra_minutes(net, oid)
            for d, did in enumerate(cube.dest_ids):
                assert cube.values[1, o, d] == pytest.approx(ref.get(did, math.inf), abs=1e-9)


def test_later_departure_never_arrives_earlier():
    rng = random.Random(77)
    for _ in range(15):
        net = random_network(rng)
        times = np.sort(np.array([rng.uniform(0, 86400) for _ in range(12)]))
        src = net.nodes[0].id
        arrivals = np.array([one_to_all_td(net, src, t).arrival for t in times])
        finite = np.isfinite(arrivals).all(axis=0)
        assert (np.diff(arrivals[:, finite], axis=0) >= 0).all()


def test_cube_one_zone_one_slot():
    net = make_network([(1, 0, 0), (2, 1000, 0)], [(1, 1, 2, 1000, 50, None)])
    zones = (Zone(0, 0, 0, 0, 0, 1.0, False, 1), Zone(1, 0, 1, 1000, 0, 1.0, True, 2))
    cube = build_cost_cube(net, ZoneGrid(1000, zones, 0), [0.0])
    assert cube.shape == (1, 1, 2)
    assert cube.values[0, 0, 0] == 0.0
    assert cube.values[0, 0, 1] == pytest.approx(1.2)


def test_shared_snap_node_is_zero():
    net = make_network([(1, 0, 0), (2, 1000, 0)], [(1, 1, 2, 1000, 50, None)])
    zones = (Zone(0, 0, 0, 0, 0, 1.0, False, 1), Zone(1, 0, 1, 10, 0, 1.0, False, 1))
    cube = build_cost_cube(net, ZoneGrid(1000, zones, 0), [0.0, 43200.0])
    assert (cube.values == 0).all()


def test_cube_requires_snapped_grid():
    net = make_network([(1, 0, 0)], [])
    with pytest.raises(RoutingError):
        build_cost_cube(net, ZoneGrid(1000, (Zone(0, 0, 0, 0, 0),), 0), [0.0])


def test_unreachable_counted():
    net = make_network([(1, 0, 0), (2, 1000, 0)], [(1, 1, 2, 1000, 50, None)])
    cube = build_cost_cube(net, node_grid(net), [0.0, 3600.0])
    assert cube.unreachable == 2  # 2 -> 1 in both slots


def test_peak_slower_than_night(tmp_path):
    from tdaccess.synth import SynthSpec, make_grid, make_network as synth_net
    from tdaccess.zoning import snap_centroids
    spec = SynthSpec(width_m=8000, height_m=8000, unprofiled_share=0.0)
    net = synth_net(spec, 1)
    grid = snap_centroids(make_grid(spec, 1), net)
    cube = build_cost_cube(net, grid, [3 * 3600.0, 8 * 3600.0])
    night, peak = cube.values[0], cube.values[1]
    off_diag = night > 0
    assert (peak[off_diag] > night[off_diag]).all()


def test_to_and_from_center_symmetric_flat():
    nodes = [(1, 0, 0), (2, 1000, 0), (3, 0, 1000)]
    edges = [(1, 1, 2, 1000, 50, None), (2, 2, 1, 1000, 50, None),
             (3, 1, 3, 2000, 40, None), (4, 3, 1, 2000, 40, None)]
    net = make_network(nodes, edges)
    cube = build_cost_cube(net, node_grid(net), [0.0, 7200.0])
    ct = to_center_column(cube, 1)
    assert ct.from_center[:, 0] .tolist() == [0.0, 0.0]
    assert np.array_equal(ct.from_center, ct.to_center)


def test_center_asymmetric_one_way():
    prof = two_level(0.5, 1.0, 0, 144)
    nodes = [(1, 0, 0), (2, 1000, 0)]
    edges = [(1, 1, 2, 1000, 50, "slow"), (2, 2, 1, 3000, 50, None)]
    net = make_network(nodes, edges, {"slow": prof})
    cube = build_cost_cube(net, node_grid(net), [0.0])
    ct = to_center_column(cube, 1)
    out = one_to_all_td(net, 1, 0.0).minutes(2)
    back = one_to_all_td(net, 2, 0.0).minutes(1)
    assert ct.from_center[0, 1] == pytest.approx(out) == pytest.approx(2.4)
    assert ct.to_center[0, 1] == pytest.approx(back) == pytest.approx(3.6)
    with pytest.raises(RoutingError):
        to_center_column(cube, 99)


def test_cube_file_round_trip(tmp_path):
    vals = np.array([[[0.0, 1.5, np.inf]], [[0.0, 2.25, 7.0]]])
    cube = CostCube(vals, (4,), (4, 5, 6), (0.0, 900.0))
    write_cube(cube, tmp_path / "c.tdc")
    raw = (tmp_path / "c.tdc").read_bytes()
    assert raw[:4] == b"TDC1"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [2, 1, 3]
    back = read_cube(tmp_path / "c.tdc", (4,), (4, 5, 6), (0.0, 900.0))
    assert np.array_equal(back.values, vals)
    with pytest.raises(RoutingError, match="destinations"):
        read_cube(tmp_path / "c.tdc", (4,), (4, 5))
    write_cube_csv(cube, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "slot,origin,destination,minutes"
    assert lines[3] == "0,4,6,inf"


def test_bad_cube_file(tmp_path):
    (tmp_path / "x.tdc").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(RoutingError):
        read_cube(tmp_path / "x.tdc")


def test_workers_identical():
    rng = random.Random(31)
    net = random_network(rng, max_nodes=8, max_edges=20)
    grid = node_grid(net)
    one = build_cost_cube(net, grid, SlotSchedule(4, 21600.0), workers=1)
    two = build_cost_cube(net, grid, SlotSchedule(4, 21600.0), workers=2)
    assert one.values.tobytes() == two.values.tobytes()


def test_freeflow_cube_ignores_profiles():
    net = make_network([(1, 0, 0), (2, 1000, 0)], [(1, 1, 2, 1000, 50, "p")], {"p": flat(0.5)})
    ff = build_freeflow_cube(net, node_grid(net))
    assert ff.shape == (1, 2, 2)
    assert ff.values[0, 0, 1] == pytest.approx(1.2)
    assert edge_traversal_time(net, 1, 0.0) == pytest.approx(2.4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 1.0))
def test_slowdown_never_faster(seed, r):
    rng = random.Random(seed)
    net = random_network(rng, max_nodes=6, max_edges=12, p_unprofiled=0.0)
    slower = make_network(
        [(n.id, n.x, n.y) for n in net.nodes],
        [(e.id, e.from_node, e.to_node, e.length_m, e.freeflow_kmh, e.profile_id) for e in net.edges],
        {pid: tuple(b * r for b in p.bins) for pid, p in net.profiles.items()})
    slots = SlotSchedule(6, 14400.0)
    a = build_cost_cube(net, node_grid(net), slots).values
    b = build_cost_cube(slower, node_grid(slower), slots).values
    assert (b >= a).all()
