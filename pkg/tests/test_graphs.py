from __future__ import annotations

import io

import pytest

from conftest import random_graph, rng_for
from ergmk.graphs import (
    Graph,
    GraphError,
    NeighborClass,
    Toggle,
    all_toggles,
    apply_toggle,
    edge_count,
    hamming_neighbors,
    mutual_count,
    num_toggles,
    read_edgelist,
    toggle_index,
    write_edgelist,
)


def test_toggle_on_empty_graph_adds_single_edge():
    g = Graph(3, directed=False)
    h = apply_toggle(g, Toggle(0, 1))
    assert h.edges() == [(0, 1)]
    assert edge_count(h) == 1
    assert edge_count(g) == 0  # input untouched


def test_toggle_is_involution():
    g = Graph(3, directed=False)
    h = apply_toggle(apply_toggle(g, Toggle(0, 1)), Toggle(0, 1))
    assert h == g


def test_toggle_removes_from_complete_directed():
    g = Graph.complete(3, directed=True)
    h = apply_toggle(g, Toggle(2, 0))
    assert edge_count(h) == 5
    assert not h.has_edge(2, 0)
    assert h.has_edge(0, 2)


def test_toggle_rejects_bad_indices():
    g = Graph(3)
    with pytest.raises(GraphError):
        apply_toggle(g, Toggle(0, 3))
    with pytest.raises(GraphError):
        apply_toggle(g, Toggle(1, 1))


def test_hamming_neighbors_empty_undirected():
    nbrs = hamming_neighbors(Graph(3, directed=False))
    assert len(nbrs) == 3
    assert all(cls is NeighborClass.HPLUS for _, cls in nbrs)


def test_hamming_neighbors_empty_directed():
    nbrs = hamming_neighbors(Graph(3, directed=True))
    assert len(nbrs) == 6
    assert all(cls is NeighborClass.HPLUS for _, cls in nbrs)


def test_hamming_neighbors_one_edge():
    g = Graph.from_edges(3, False, [(0, 1)])
    nbrs = hamming_neighbors(g)
    classes = [cls for _, cls in nbrs]
    assert classes.count(NeighborClass.HMINUS) == 1
    assert classes.count(NeighborClass.HPLUS) == 2


def test_edge_and_mutual_counts():
    g = Graph.from_edges(2, True, [(0, 1), (1, 0)])
    assert edge_count(g) == 2
    assert mutual_count(g) == 1
    g2 = Graph.from_edges(3, True, [(0, 1), (1, 0), (1, 2)])
    assert edge_count(g2) == 3
    assert mutual_count(g2) == 1
    empty = Graph(4, directed=True)
    assert edge_count(empty) == 0
    assert mutual_count(empty) == 0


def test_mutual_count_rejects_undirected():
    with pytest.raises(GraphError):
        mutual_count(Graph(3, directed=False))


@pytest.mark.parametrize("directed", [False, True])
def test_involution_property_random(directed):
    rng = rng_for(101)
    for _ in range(50):
        n = int(rng.integers(2, 8))
        g = random_graph(rng, n, directed)
        toggles = all_toggles(n, directed)
        t = toggles[int(rng.integers(len(toggles)))]
        assert apply_toggle(apply_toggle(g, t), t) == g


@pytest.mark.parametrize("directed", [False, True])
def test_neighbors_complete_and_distinct(directed):
    rng = rng_for(202)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        g = random_graph(rng, n, directed)
        nbrs = hamming_neighbors(g)
        assert len(nbrs) == num_toggles(n, directed)
        images = {apply_toggle(g, t) for t, _ in nbrs}
        assert len(images) == len(nbrs)
        # each neighbor differs from g in exactly one edge variable
        for t, cls in nbrs:
            h = apply_toggle(g, t)
            diff = sum(
                (g.adj[s.i] >> s.j & 1) != (h.adj[s.i] >> s.j & 1)
                for s in all_toggles(n, directed)
            )
            assert diff == 1
            if cls is NeighborClass.HPLUS:
                assert edge_count(h) == edge_count(g) + 1
            else:
                assert edge_count(h) == edge_count(g) - 1


def test_bits_roundtrip():
    rng = rng_for(303)
    for directed in (False, True):
        for _ in range(20):
            n = int(rng.integers(2, 6))
            g = random_graph(rng, n, directed)
            assert Graph.from_bits(n, directed, g.to_bits()) == g


def test_toggle_index_canonical_order():
    assert toggle_index(3, False, Toggle(0, 1)) == 0
    assert toggle_index(3, False, Toggle(1, 0)) == 0  # undirected normalizes
    assert toggle_index(3, True, Toggle(1, 0)) == 2
    assert [t for t in all_toggles(3, False)] == [(0, 1), (0, 2), (1, 2)]


def test_edgelist_roundtrip():
    rng = rng_for(404)
    for directed in (False, True):
        g = random_graph(rng, 5, directed)
        buf = io.StringIO()
        write_edgelist(g, buf)
        buf.seek(0)
        assert read_edgelist(buf) == g


def test_edgelist_rejects_bad_header():
    with pytest.raises(GraphError):
        read_edgelist(io.StringIO("graph 3\n0 1\n"))
