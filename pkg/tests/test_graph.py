import numpy as np
import pytest

from oracles import adjacency_brute_force, propagation_by_definition
from mls2s.errors import InputError
from mls2s.graph import (RoadGraph, build_adjacency_from_segments, normalize_propagation, path_graph,
                         read_dense, read_edge_list, ring_graph, write_dense, write_edge_list)


def test_shared_endpoint_connects():
    g = build_adjacency_from_segments([("L1", "a", "b"), ("L2", "b", "c")])
    assert g.adjacency[0, 1] == g.adjacency[1, 0] == 1


def test_disjoint_segments():
    g = build_adjacency_from_segments([("L1", "a", "b"), ("L2", "c", "d")])
    assert not g.adjacency.any()


def test_chain_is_path_graph():
    segs = [("L1", "a", "b"), ("L2", "b", "c"), ("L3", "c", "d"), ("L4", "d", "e")]
    g = build_adjacency_from_segments(segs)
    np.testing.assert_array_equal(g.adjacency, adjacency_brute_force(segs))
    assert len(g.edges) == 3
    np.testing.assert_array_equal(g.adjacency, path_graph(4).adjacency)


@pytest.mark.parametrize("a,b", [(("a", "x"), ("a", "y")),   # origin-origin
                                 (("a", "x"), ("y", "a")),   # origin-destination
                                 (("x", "a"), ("a", "y")),   # destination-origin
                                 (("x", "a"), ("y", "a"))])  # destination-destination
def test_all_four_endpoint_pairings(a, b):
    g = build_adjacency_from_segments([("L1", *a), ("L2", *b)])
    assert g.adjacency[0, 1] == 1


def test_random_segments_match_brute_force(rng):
    ends = [f"p{i}" for i in range(12)]
    segs = [(f"L{k}", *rng.choice(ends, 2, replace=False)) for k in range(30)]
    g = build_adjacency_from_segments(segs)
    np.testing.assert_array_equal(g.adjacency, adjacency_brute_force(segs))


def test_duplicate_link_rejected():
    with pytest.raises(InputError, match="L1"):
        build_adjacency_from_segments([("L1", "a", "b"), ("L1", "c", "d")])


def test_invalid_adjacency_rejected():
    with pytest.raises(InputError):
        RoadGraph(["a", "b"], [[0, 1], [0, 0]])
    with pytest.raises(InputError):
        RoadGraph(["a", "b"], [[1, 0], [0, 0]])


class TestPropagation:
    def test_edgeless_is_identity(self):
        P = normalize_propagation(RoadGraph(["a", "b", "c"], np.zeros((3, 3))))
        np.testing.assert_array_equal(P, np.eye(3))

    def test_single_edge(self):
        P = normalize_propagation(path_graph(2))
        np.testing.assert_allclose(P, [[0.5, 0.5], [0.5, 0.5]], rtol=0, atol=1e-15)

    def test_three_node_path(self):
        P = normalize_propagation(path_graph(3))
        assert P[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert P[0, 1] == pytest.approx(1 / np.sqrt(6), abs=1e-15)
        assert P[1, 1] == pytest.approx(1 / 3, abs=1e-15)
        assert P[0, 2] == 0.0

    def test_matches_definition_on_random_graph(self, rng):
        A = np.triu(rng.random((9, 9)) < 0.3, 1).astype(float)
        A = A + A.T
        P = normalize_propagation(RoadGraph([str(i) for i in range(9)], A))
        np.testing.assert_allclose(P, propagation_by_definition(A.tolist()), rtol=0, atol=1e-15)

    def test_symmetric_with_bounded_spectrum(self, rng):
        for _ in range(10):
            A = np.triu(rng.random((12, 12)) < 0.25, 1).astype(float)
            A = A + A.T
            P = normalize_propagation(RoadGraph([str(i) for i in range(12)], A))
            assert np.array_equal(P, P.T)
            eig = np.linalg.eigvalsh(P)
            assert eig.min() >= -1 - 1e-12 and eig.max() <= 1 + 1e-12

    def test_regular_graph_preserves_constants(self):
        P = normalize_propagation(ring_graph(7))
        np.testing.assert_allclose(P @ np.ones(7), np.ones(7), rtol=0, atol=1e-15)

    def test_recompute_is_bit_identical(self):
        g = ring_graph(5)
        assert np.array_equal(normalize_propagation(g), normalize_propagation(g))

    def test_relabeling_equivariance(self, rng):
        A = np.triu(rng.random((8, 8)) < 0.4, 1).astype(float)
        A = A + A.T
        perm = rng.permutation(8)
        P = normalize_propagation(RoadGraph([str(i) for i in range(8)], A))
        Pp = normalize_propagation(RoadGraph([str(i) for i in perm], A[np.ix_(perm, perm)]))
        inv = np.argsort(perm)
        np.testing.assert_array_equal(Pp[np.ix_(inv, inv)], P)

    def test_isolated_node_row_is_identity_row(self):
        A = np.zeros((3, 3))
        A[0, 1] = A[1, 0] = 1
        P = normalize_propagation(RoadGraph(["a", "b", "c"], A))
        np.testing.assert_array_equal(P[2], [0, 0, 1])


def test_edge_list_round_trip(tmp_path):
    g = build_adjacency_from_segments([("L1", "a", "b"), ("L2", "b", "c"), ("L3", "x", "y")])
    write_edge_list(g, tmp_path / "edges.csv", tmp_path / "nodes.txt")
    assert read_edge_list(tmp_path / "edges.csv", tmp_path / "nodes.txt") == g
    assert (tmp_path / "edges.csv").read_text() == "L1,L2\n"


def test_dense_round_trip(tmp_path):
    g = ring_graph(4)
    write_dense(g, tmp_path / "adj.csv")
    assert (tmp_path / "adj.csv").read_text().splitlines()[0] == "node_id,n0,n1,n2,n3"
    assert read_dense(tmp_path / "adj.csv") == g


def test_edge_list_unknown_node(tmp_path):
    (tmp_path / "nodes.txt").write_text("a\nb\n")
    (tmp_path / "edges.csv").write_text("a,z\n")
    with pytest.raises(InputError):
        read_edge_list(tmp_path / "edges.csv", tmp_path / "nodes.txt")
