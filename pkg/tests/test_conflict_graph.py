import networkx as nx
import numpy as np
import pytest

from conflict_graph import (
    PriorityVector,
    as_rates,
    build_graph,
    format_edge_list,
    from_networkx,
    incidence_matrix,
    independent_sets,
    is_independent,
    links_to_mask,
    load_graph,
    mask_to_links,
    parse_edge_list,
    parse_priority,
    ring,
    weighted_norm,
)
from errors import CapacityError, InputError

WORKED_RATES = [0.3, 0.4, 0.3, 0.4, 0.3, 0.4]


def test_ring_neighbors(ring6):
    assert ring6.num_edges == 6
    assert ring6.neighbors(1) == {2, 6}
    assert ring6.neighbors(4) == {3, 5}
    assert ring6.has_edge(6, 1)
    assert not ring6.has_edge(1, 3)


def test_bipartite_graph_misses_only_partner_links(bipartite):
    for left in range(1, 5):
        assert bipartite.neighbors(left) == {5, 6, 7, 8} - {left + 4}
    assert is_independent(bipartite, [1, 2, 3, 4])
    assert is_independent(bipartite, [2, 6])
    assert not is_independent(bipartite, [1, 6])


def test_build_graph_drops_duplicate_edges():
    graph = build_graph(3, [(1, 2), (2, 1), (2, 3)])
    assert graph.num_edges == 2


@pytest.mark.parametrize("edges", [[(1, 1)], [(0, 2)], [(1, 4)], [(1, 2, 3)]])
def test_build_graph_rejects_bad_edges(edges):
    with pytest.raises(InputError):
        build_graph(3, edges)


def test_build_graph_enforces_size_cap():
    with pytest.raises(CapacityError):
        build_graph(10, [], n_max=8)


def test_neighbors_rejects_unknown_link(ring6):
    with pytest.raises(InputError, match="outside 1..6"):
        ring6.neighbors(7)


def test_networkx_interchange(ring6):
    assert from_networkx(nx.cycle_graph(6)) == ring6
    exported = ring6.to_networkx()
    assert sorted(exported.nodes) == [1, 2, 3, 4, 5, 6]
    assert exported.number_of_edges() == 6


def test_edge_list_parsing_with_comments():
    text = "# a path\n3\n1 2  # first\n\n2 3\n"
    graph = parse_edge_list(text)
    assert graph.n == 3
    assert graph.edges == {(1, 2), (2, 3)}
    assert parse_edge_list(format_edge_list(graph)) == graph


@pytest.mark.parametrize("text", ["", "3 4\n1 2\n", "3\n1 x\n", "3\n1 2 3\n"])
def test_edge_list_errors(text):
    with pytest.raises(InputError):
        parse_edge_list(text)


def test_load_graph_specifiers(tmp_path, inputs_dir, ring6):
    assert load_graph("ring:6") == ring6
    assert load_graph("bipartite8").n == 8
    assert load_graph(str(inputs_dir / "ring6.edges")) == ring6
    path = tmp_path / "g.txt"
    path.write_text("2\n1 2\n")
    assert load_graph(str(path)).num_edges == 1
    with pytest.raises(InputError):
        load_graph("ring:x")
    with pytest.raises(InputError):
        load_graph(str(tmp_path / "missing.txt"))


def test_masks_and_link_sets():
    assert links_to_mask([1, 3]) == 0b101
    assert mask_to_links(0b101) == {1, 3}
    assert mask_to_links(0) == frozenset()


def test_priority_vector_validation_and_order():
    p = PriorityVector.from_order((3, 1, 2))
    assert p.values == (2, 3, 1)
    assert p.order == (3, 1, 2)
    assert str(PriorityVector.identity(3)) == "1 2 3"
    with pytest.raises(InputError):
        PriorityVector((1, 1, 2))
    with pytest.raises(InputError):
        PriorityVector.from_order((1, 4, 2))


def test_parse_priority():
    assert parse_priority("2 1 3  # comment", n=3).values == (2, 1, 3)
    with pytest.raises(InputError):
        parse_priority("1 2 x")
    with pytest.raises(InputError):
        parse_priority("1 2 3", n=4)


def test_incidence_matrix_worked_example(ring6):
    P = incidence_matrix(ring6, PriorityVector.identity(6))
    assert P.higher[0] == ()
    assert P.higher[5] == (1, 5)
    np.testing.assert_allclose(P.dot(WORKED_RATES), [0.3, 0.7, 0.7, 0.7, 0.7, 1.0], atol=1e-12)
    assert weighted_norm(P, WORKED_RATES) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(np.diag(P.dense), np.ones(6))


def test_incidence_matrix_rejects_wrong_length(ring6):
    with pytest.raises(InputError):
        incidence_matrix(ring6, PriorityVector.identity(5))


def test_independent_sets_lexicographic():
    assert list(independent_sets(ring(4))) == [(), (1,), (1, 3), (2,), (2, 4), (3,), (4,)]


def test_independent_sets_counts_and_restriction(ring6):
    # Independent sets of an n-cycle are counted by the Lucas numbers.
    assert len(list(independent_sets(ring6))) == 18
    assert list(independent_sets(ring6, within=[1, 2])) == [(), (1,), (2,)]
    for links in independent_sets(ring6):
        assert is_independent(ring6, links)


def test_independent_sets_capacity(ring6):
    with pytest.raises(CapacityError):
        list(independent_sets(ring6, n_max=3))


def test_as_rates_validation():
    np.testing.assert_array_equal(as_rates([0, 0.5]), [0.0, 0.5])
    with pytest.raises(InputError, match="link 2"):
        as_rates([0.1, -0.1])
    with pytest.raises(InputError):
        as_rates([0.1], n=2)
    with pytest.raises(InputError):
        as_rates([np.nan])
    with pytest.raises(InputError):
        as_rates(["x"])
