import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crawlrlr.graph import (MISSING, GraphFormatError, GraphValidationError, from_edges,
                            giant_component, labeled_subgraph, load_graph, split_labels,
                            write_graph, LabelSplit)

from conftest import make_graph, path_graph, star_graph


def _write(tmp_path, edges_text, attrs_text):
    e = tmp_path / "edges.txt"
    a = tmp_path / "attrs.csv"
    e.write_text(edges_text)
    a.write_text(attrs_text)
    return e, a


def test_load_path_graph(tmp_path):
    e, a = _write(tmp_path, "1 2\n2 3\n", "node_id,label\n1,A\n2,B\n3,A\n")
    g = load_graph(e, a, "label")
    assert g.n_nodes == 3
    assert g.degrees.tolist() == [1, 2, 1]
    assert g.class_names == ("A", "B")
    assert g.labels.tolist() == [0, 1, 0]


def test_self_loop_dropped_and_counted(tmp_path):
    e, a = _write(tmp_path, "1 1\n1 2\n", "node_id,label\n1,A\n2,B\n")
    g = load_graph(e, a, "label")
    assert g.dropped_edges == 1
    assert g.n_edges == 1


def test_reverse_duplicate_is_one_edge(tmp_path):
    e, a = _write(tmp_path, "1 2\n2 1\n", "node_id,label\n1,A\n2,B\n")
    g = load_graph(e, a, "label")
    assert g.n_edges == 1
    assert g.dropped_edges == 1


def test_comments_blank_lines_and_missing_values(tmp_path):
    e, a = _write(tmp_path, "# header\n\n5 7\n7 9\n",
                  "node_id,color,label\n5,red,x\n7,,\n9,blue,y\n")
    g = load_graph(e, a, "label")
    assert g.labels[g.index_of(7)] == MISSING
    # an empty attribute cell is its own level
    assert g.attr_levels[0] == ("", "blue", "red")
    assert g.attr_names == ("color",)


def test_malformed_edge_line_reports_line_number(tmp_path):
    e, a = _write(tmp_path, "1 2\n2 x\n", "node_id,label\n1,A\n2,B\n")
    with pytest.raises(GraphFormatError, match=":2:"):
        load_graph(e, a, "label")
    e, a = _write(tmp_path, "1 2 3\n", "node_id,label\n1,A\n2,B\n")
    with pytest.raises(GraphFormatError, match=":1:"):
        load_graph(e, a, "label")


def test_malformed_attr_line_reports_line_number(tmp_path):
    e, a = _write(tmp_path, "1 2\n", "node_id,label\n1,A\n2,B,extra\n")
    with pytest.raises(GraphFormatError, match=":3:"):
        load_graph(e, a, "label")


def test_unknown_endpoint_lists_offenders(tmp_path):
    e, a = _write(tmp_path, "1 2\n2 8\n9 1\n", "node_id,label\n1,A\n2,B\n")
    with pytest.raises(GraphValidationError, match="8, 9"):
        load_graph(e, a, "label")


def test_missing_label_column(tmp_path):
    e, a = _write(tmp_path, "1 2\n", "node_id,kind\n1,A\n2,B\n")
    with pytest.raises(GraphFormatError):
        load_graph(e, a, "label")


def test_write_load_round_trip(tmp_path):
    g = make_graph([(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)], attrs=[[0, 1], [1, 0], [2, 1], [0, 0]])
    write_graph(g, tmp_path / "e", tmp_path / "a", "label")
    h = load_graph(tmp_path / "e", tmp_path / "a", "label")
    assert np.array_equal(g.indptr, h.indptr) and np.array_equal(g.indices, h.indices)
    assert np.array_equal(g.attr_codes, h.attr_codes)
    assert np.array_equal(g.labels, h.labels)
    assert g.attr_levels == h.attr_levels


def test_giant_component_examples():
    # sizes 5 and 3
    g = make_graph([(0, 1), (1, 2), (2, 3), (3, 4), (5, 6), (6, 7)], 8)
    assert giant_component(g).node_ids.tolist() == [0, 1, 2, 3, 4]
    connected = path_graph(4)
    assert giant_component(connected) is connected
    # two components of size 4 with minimum ids 0 and 7
    ids = np.array([0, 7, 8, 9, 10, 11, 12, 13])
    edges = [(1, 2), (2, 3), (3, 4), (0, 5), (5, 6), (6, 7)]
    g = from_edges(np.array(edges), 8, labels=np.zeros(8, int), node_ids=ids)
    assert giant_component(g).node_ids.tolist() == [0, 11, 12, 13]


def test_giant_component_idempotent():
    g = make_graph([(0, 1), (1, 2), (3, 4)], 5)
    gc = giant_component(g)
    assert giant_component(gc) is gc


def test_split_labels_examples():
    g = path_graph(10)
    assert len(split_labels(g, 1.0, 0).observed) == 10
    assert len(split_labels(g, 0.5, 0).observed) == 5
    a, b = split_labels(g, 0.5, 42), split_labels(g, 0.5, 42)
    assert np.array_equal(a.observed, b.observed)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            split_labels(g, bad, 0)


def test_split_partition():
    s = split_labels(path_graph(17), 0.3, 1)
    assert len(np.intersect1d(s.observed, s.hidden)) == 0
    assert len(s.observed) + len(s.hidden) == 17


def test_labeled_subgraph_examples():
    g = make_graph([(0, 1), (1, 2), (4, 5)], 6)
    all_obs = LabelSplit(np.arange(6), 6)
    assert np.array_equal(labeled_subgraph(g, all_obs).node_ids, giant_component(g).node_ids)
    # path 1-2-3 with ends observed: isolated nodes, tie goes to the first
    p = from_edges(np.array([(0, 1), (1, 2)]), 3, labels=np.zeros(3, int), node_ids=np.array([1, 2, 3]))
    sub = labeled_subgraph(p, LabelSplit(np.array([0, 2]), 3))
    assert sub.node_ids.tolist() == [1]
    star = star_graph(4)
    sub = labeled_subgraph(star, LabelSplit(np.array([0, 1, 2]), 5))
    assert sub.n_nodes == 3 and sub.degrees.tolist() == [2, 1, 1]
    with pytest.raises(ValueError, match="no labeled giant component"):
        labeled_subgraph(star, LabelSplit(np.array([], dtype=int), 5))


edge_lists = st.lists(st.tuples(st.integers(0, 14), st.integers(0, 14)), max_size=60)


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_graph_invariants(edges):
    g = make_graph(edges or [(0, 1)], 15)
    g.validate()
    assert g.degrees.sum() == 2 * g.n_edges
    gc = giant_component(g)
    gc.validate()
    assert gc.degrees.sum() == 2 * gc.n_edges
    assert giant_component(gc).n_nodes == gc.n_nodes
    if gc.n_nodes > 1:
        assert gc.degrees.min() >= 1
