import numpy as np
import pytest

from crawlrlr.graph import from_edges


def make_graph(edges, n=None, labels=None, attrs=None, levels=None, n_classes=2):
    """Small graph on dense ids; ``attrs`` is an (n, k) code array."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = int(edges.max()) + 1 if n is None else n
    if labels is None:
        labels = np.arange(n) % n_classes
    kw = {}
    if attrs is not None:
        attrs = np.asarray(attrs, dtype=np.int64).reshape(n, -1)
        k = attrs.shape[1]
        if levels is None:
            levels = [tuple(f"v{i}" for i in range(attrs[:, a].max() + 1)) for a in range(k)]
        kw = dict(attr_names=[f"a{a}" for a in range(k)], attr_levels=levels, attr_codes=attrs)
    return from_edges(edges, n, labels=labels,
                      class_names=tuple(f"c{h}" for h in range(n_classes)), **kw)


def path_graph(n):
    return make_graph([(i, i + 1) for i in range(n - 1)], n)


def star_graph(leaves):
    return make_graph([(0, i) for i in range(1, leaves + 1)], leaves + 1)


def complete_graph(n):
    return make_graph([(i, j) for i in range(n) for j in range(i + 1, n)], n)


def small_attributed(n_classes=2):
    """An irregular 8-node connected graph with one 3-level attribute."""
    edges = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 4),
             (1, 5), (0, 6)]
    attrs = np.array([0, 1, 2, 0, 1, 2, 0, 1])
    labels = np.array([0, 1, 0, 1, 1, 0, 0, 1]) % n_classes
    if n_classes > 2:
        labels = np.array([0, 1, 2, 1, 2, 0, 0, 1])
    return make_graph(edges, 8, labels=labels, attrs=attrs[:, None], n_classes=n_classes)


@pytest.fixture
def g8():
    return small_attributed()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
