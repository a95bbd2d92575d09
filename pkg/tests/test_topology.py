import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efhc.topology import (
    GraphSnapshot,
    InfoFlowLog,
    TopologySchedule,
    certify_B_connectivity,
    compute_window_B,
    gen_rgg,
    is_connected,
    read_info_flow,
    snapshot_at,
    snapshot_from_text,
    snapshot_to_text,
    union_graph,
    write_info_flow,
)


def to_networkx(g: GraphSnapshot) -> nx.Graph:
    out = nx.Graph()
    out.add_nodes_from(range(g.m))
    out.add_edges_from(g.edges)
    return out


def test_snapshot_rejects_self_loop():
    with pytest.raises(ValueError, match="self-loop"):
        GraphSnapshot(3, frozenset({(1, 1)}))


def test_snapshot_rejects_out_of_range():
    with pytest.raises(ValueError, match="out of range"):
        GraphSnapshot(3, frozenset({(0, 3)}))
    with pytest.raises(ValueError, match="out of range"):
        GraphSnapshot(3, frozenset({(2, 1)}))


def test_snapshot_from_edges_normalizes_order():
    g = GraphSnapshot.from_edges(3, [(2, 0), (1, 2)])
    assert g.edges == frozenset({(0, 2), (1, 2)})


def test_degrees_and_neighbors():
    g = GraphSnapshot.from_edges(4, [(0, 1), (1, 2)])
    assert g.degrees().tolist() == [1, 2, 1, 0]
    assert g.neighbors(1) == [0, 2]
    assert g.has_edge(2, 1)
    assert not g.has_edge(0, 3)


def test_is_connected_cases():
    assert is_connected(GraphSnapshot(1, frozenset()))
    assert not is_connected(GraphSnapshot(2, frozenset()))
    assert is_connected(GraphSnapshot.from_edges(3, [(0, 1), (1, 2)]))
    assert not is_connected(GraphSnapshot.from_edges(4, [(0, 1), (2, 3)]))


@given(st.integers(2, 12), st.integers(0, 100))
@settings(max_examples=60, deadline=None)
def test_is_connected_matches_networkx(m, seed):
    rng = np.random.default_rng(seed)
    edges = {
        (i, j) for i in range(m) for j in range(i + 1, m) if rng.random() < 0.3
    }
    g = GraphSnapshot(m, frozenset(edges))
    assert is_connected(g) == nx.is_connected(to_networkx(g))


def test_union_graph():
    a = GraphSnapshot.from_edges(3, [(0, 1)])
    b = GraphSnapshot.from_edges(3, [(1, 2)])
    assert union_graph([a, b]).edges == frozenset({(0, 1), (1, 2)})


def test_union_graph_rejects_mismatch():
    a = GraphSnapshot.from_edges(3, [(0, 1)])
    b = GraphSnapshot.from_edges(4, [(1, 2)])
    with pytest.raises(ValueError, match="mismatch"):
        union_graph([a, b])
    with pytest.raises(ValueError, match="at least one"):
        union_graph([])


def test_gen_rgg_deterministic_and_connected():
    g1 = gen_rgg(8, 0.5, seed=11)
    g2 = gen_rgg(8, 0.5, seed=11)
    assert g1.edges == g2.edges
    assert is_connected(g1)
    g3 = gen_rgg(8, 0.5, seed=12)
    assert g3.edges != g1.edges  # overwhelmingly likely for a fresh seed


def test_gen_rgg_retry_cap():
    with pytest.raises(RuntimeError, match="1000 draws"):
        gen_rgg(3, 0.0001, seed=1)


def test_gen_rgg_rejects_tiny_m():
    with pytest.raises(ValueError, match="at least two"):
        gen_rgg(1, 0.5, seed=0)


def test_gen_rgg_density_mode():
    m = 20
    g = gen_rgg(m, 0.5, seed=3, as_density=True)
    density = len(g.edges) / (m * (m - 1) / 2)
    assert abs(density - 0.5) < 0.1


def test_gen_rgg_reports_attempts():
    g, attempts = gen_rgg(8, 0.5, seed=11, return_attempts=True)
    assert attempts >= 0
    assert is_connected(g)


def test_cyclic_partition_four_cycle():
    base = GraphSnapshot.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    sched = TopologySchedule(base=base, mode="cyclic", b1=2)
    g0 = snapshot_at(sched, 0)
    g1 = snapshot_at(sched, 1)
    assert len(g0.edges) == 2 and len(g1.edges) == 2
    assert g0.edges & g1.edges == frozenset()
    assert g0.edges | g1.edges == base.edges


def test_cyclic_window_unions_cover_base():
    base = gen_rgg(7, 0.6, seed=5)
    for b1 in (2, 3, 4):
        sched = TopologySchedule(base=base, mode="cyclic", b1=b1)
        for k in range(12):
            window = union_graph([snapshot_at(sched, k + s) for s in range(b1)])
            assert window.edges == base.edges
            assert is_connected(window)


def test_random_subset_window_invariant():
    base = gen_rgg(8, 0.55, seed=9)
    for prob in (0.2, 0.6):
        sched = TopologySchedule(
            base=base, mode="random-subset", b1=3, seed=21, subset_prob=prob
        )
        for k in range(30):
            window = union_graph([snapshot_at(sched, k + s) for s in range(3)])
            assert is_connected(window)
            assert window.edges <= base.edges


def test_random_subset_deterministic():
    base = gen_rgg(6, 0.6, seed=2)
    sched = TopologySchedule(base=base, mode="random-subset", b1=2, seed=4, subset_prob=0.5)
    for k in (0, 3, 7):
        assert snapshot_at(sched, k).edges == snapshot_at(sched, k).edges


def test_static_schedule_and_validation():
    base = gen_rgg(5, 0.7, seed=1)
    sched = TopologySchedule(base=base, mode="static")
    assert snapshot_at(sched, 0).edges == base.edges
    assert snapshot_at(sched, 99).edges == base.edges
    assert sched.effective_b1 == 1
    with pytest.raises(ValueError, match="unknown mode"):
        TopologySchedule(base=base, mode="florp")
    with pytest.raises(ValueError, match="non-negative"):
        snapshot_at(sched, -1)
    disconnected = GraphSnapshot.from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(ValueError, match="connected"):
        TopologySchedule(base=disconnected, mode="static")
    with pytest.raises(ValueError, match="subset_prob"):
        TopologySchedule(base=base, mode="random-subset", subset_prob=0.0)


def test_compute_window_B_values():
    assert compute_window_B(1, 1) == 3
    assert compute_window_B(2, 3) == 6
    assert compute_window_B(5, 12) == 20
    with pytest.raises(ValueError):
        compute_window_B(0, 3)
    with pytest.raises(ValueError):
        compute_window_B(3, 0)


@given(st.integers(1, 40), st.integers(1, 400))
@settings(max_examples=200, deadline=None)
def test_compute_window_B_bracket_property(b1, b2):
    B = compute_window_B(b1, b2)
    l = B // b1 - 2
    assert l * b1 <= b2 <= (l + 1) * b1 - 1
    assert B % b1 == 0


def _brute_force_violations(log: InfoFlowLog, B: int) -> list[int]:
    out = []
    for k in range(len(log) - B + 1):
        g = nx.Graph()
        g.add_nodes_from(range(log.m))
        for s in range(k, k + B):
            g.add_edges_from(log.used[s])
        if not nx.is_connected(g):
            out.append(k)
    return out


def test_certify_matches_bruteforce_on_random_logs():
    rng = np.random.default_rng(77)
    for _ in range(100):
        m = int(rng.integers(3, 9))
        T = int(rng.integers(5, 21))
        B = int(rng.integers(1, 5))
        if T < B:
            T = B
        log = InfoFlowLog(m)
        for _ in range(T):
            edges = {
                (i, j)
                for i in range(m)
                for j in range(i + 1, m)
                if rng.random() < 0.25
            }
            log.append(edges)
        assert certify_B_connectivity(log, B) == _brute_force_violations(log, B)


def test_certify_rejects_short_log():
    log = InfoFlowLog(3)
    log.append([(0, 1)])
    with pytest.raises(ValueError, match="at least B"):
        certify_B_connectivity(log, 2)


def test_certify_connected_static_log():
    log = InfoFlowLog(3)
    for _ in range(6):
        log.append([(0, 1), (1, 2)])
    assert certify_B_connectivity(log, 2) == []


def test_edge_list_text_format():
    g = GraphSnapshot.from_edges(3, [(1, 2), (0, 1)])
    assert snapshot_to_text(g) == "m 3\n0 1\n1 2\n"
    assert snapshot_from_text("m 3\n0 1\n1 2\n").edges == g.edges


def test_edge_list_parse_errors():
    with pytest.raises(ValueError, match="m <count>"):
        snapshot_from_text("3\n0 1\n")
    with pytest.raises(ValueError, match="bad edge line"):
        snapshot_from_text("m 3\n0 1 2\n")


def test_info_flow_roundtrip(tmp_path):
    log = InfoFlowLog(4)
    log.append([(0, 1), (2, 3)])
    log.append([])
    log.append([(1, 2)])
    path = tmp_path / "flow.txt"
    write_info_flow(log, path)
    back = read_info_flow(path)
    assert back.m == 4
    assert back.used == log.used
