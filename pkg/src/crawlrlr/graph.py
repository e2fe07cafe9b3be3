"""Immutable attributed graphs.

Nodes are stored under a dense 0-based index sorted by their original
integer id; ``node_ids`` translates back. Adjacency is CSR with sorted
neighbour lists and both directions of every undirected edge present.
Attribute values are interned per attribute into small integer codes, the
empty string standing for a missing value. Labels are class codes
``0..H-1`` with ``MISSING = -1``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

MISSING = -1


class GraphFormatError(ValueError):
    """Malformed edge or attribute file."""


class GraphValidationError(ValueError):
    """Edge and attribute files disagree."""


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    indptr: np.ndarray
    indices: np.ndarray
    attr_names: tuple[str, ...]
    attr_levels: tuple[tuple[str, ...], ...]
    attr_codes: np.ndarray  # (n, n_attrs) int
    labels: np.ndarray  # (n,) int, MISSING for unlabeled
    class_names: tuple[str, ...]
    node_ids: np.ndarray  # (n,) original ids, strictly increasing
    dropped_edges: int = 0

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.attr_codes, self.labels, self.node_ids):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return len(self.indices) // 2

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def has_node(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and 0 <= v < self.n_nodes

    def attr_index(self, name: str) -> int:
        try:
            return self.attr_names.index(name)
        except ValueError:
            raise KeyError(f"unknown attribute {name!r}") from None

    def index_of(self, node_id: int) -> int:
        """Dense index of an original node id."""
        i = int(np.searchsorted(self.node_ids, node_id))
        if i >= self.n_nodes or self.node_ids[i] != node_id:
            raise KeyError(f"node id {node_id} not in graph")
        return i

    def adjacency(self) -> sparse.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        return sparse.csr_matrix((data, self.indices, self.indptr),
                                 shape=(self.n_nodes, self.n_nodes))

    def subgraph(self, nodes) -> "AttributedGraph":
        """Induced subgraph on ``nodes`` (dense indices), order preserved."""
        nodes = np.unique(np.asarray(nodes, dtype=np.int64))
        remap = np.full(self.n_nodes, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        src = np.repeat(np.arange(self.n_nodes), self.degrees)
        keep = (remap[src] >= 0) & (remap[self.indices] >= 0)
        s, t = remap[src[keep]], remap[self.indices[keep]]
        indptr = np.concatenate([[0], np.cumsum(np.bincount(s, minlength=len(nodes)))])
        # src is sorted and each neighbour list is sorted, so t stays sorted per row
        return AttributedGraph(
            indptr=indptr.astype(np.int64),
            indices=t.astype(np.int64),
            attr_names=self.attr_names,
            attr_levels=self.attr_levels,
            attr_codes=self.attr_codes[nodes].copy(),
            labels=self.labels[nodes].copy(),
            class_names=self.class_names,
            node_ids=self.node_ids[nodes].copy(),
        )

    def validate(self) -> None:
        """Check the structural invariants, raising AssertionError."""
        n = self.n_nodes
        assert self.indptr[0] == 0 and self.indptr[-1] == len(self.indices)
        assert np.all(np.diff(self.node_ids) > 0)
        src = np.repeat(np.arange(n), self.degrees)
        assert not np.any(src == self.indices), "self-loop"
        for v in range(n):
            nb = self.neighbors(v)
            assert np.all(np.diff(nb) > 0), "unsorted or duplicate neighbours"
        a = self.adjacency()
        assert (a != a.T).nnz == 0, "asymmetric adjacency"
        lab = self.labels[self.labels != MISSING]
        assert np.all((lab >= 0) & (lab < self.n_classes))


@dataclass(frozen=True)
class LabelSplit:
    """Which nodes have visible labels."""

    observed: np.ndarray  # sorted dense indices
    n_nodes: int

    @property
    def hidden(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_nodes), self.observed)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_nodes, dtype=bool)
        m[self.observed] = True
        return m


def from_edges(edges, n_nodes: int, *, attr_names=(), attr_levels=(), attr_codes=None,
               labels=None, class_names=("0", "1"), node_ids=None) -> AttributedGraph:
    """Build a graph from an ``(m, 2)`` array of dense-index edges.

    Self-loops and duplicate edges (in either direction) are dropped and
    counted in ``dropped_edges``.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= n_nodes):
        raise GraphValidationError("edge endpoint out of range")
    loops = edges[:, 0] == edges[:, 1]
    e = edges[~loops]
    e = np.sort(e, axis=1)
    uniq = np.unique(e, axis=0) if len(e) else e
    dropped = int(loops.sum()) + (len(e) - len(uniq))
    src = np.concatenate([uniq[:, 0], uniq[:, 1]])
    dst = np.concatenate([uniq[:, 1], uniq[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n_nodes))])
    if attr_codes is None:
        attr_codes = np.zeros((n_nodes, len(attr_names)), dtype=np.int64)
    if labels is None:
        labels = np.full(n_nodes, MISSING, dtype=np.int64)
    if node_ids is None:
        node_ids = np.arange(n_nodes, dtype=np.int64)
    return AttributedGraph(
        indptr=indptr.astype(np.int64),
        indices=dst.astype(np.int64),
        attr_names=tuple(attr_names),
        attr_levels=tuple(tuple(lv) for lv in attr_levels),
        attr_codes=np.asarray(attr_codes, dtype=np.int64).reshape(n_nodes, len(attr_names)),
        labels=np.asarray(labels, dtype=np.int64),
        class_names=tuple(class_names),
        node_ids=np.asarray(node_ids, dtype=np.int64),
        dropped_edges=dropped,
    )


def read_edge_file(path) -> np.ndarray:
    """Parse whitespace-separated integer id pairs; ``#`` lines are comments."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 2 node ids, got {len(parts)} fields")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id") from None
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def read_attr_file(path):
    """Return ``(ids, names, columns)`` from a ``node_id,attr...`` CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphFormatError(f"{path}: empty attribute file") from None
        if len(header) < 1:
            raise GraphFormatError(f"{path}:1: empty header")
        names = [h.strip() for h in header[1:]]
        ids, cols = [], [[] for _ in names]
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise GraphFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                ids.append(int(row[0]))
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer node id {row[0]!r}") from None
            for c, val in zip(cols, row[1:]):
                c.append(val.strip())
    if len(set(ids)) != len(ids):
        raise GraphFormatError(f"{path}: duplicate node ids")
    return np.array(ids, dtype=np.int64), names, cols


def _intern(values):
    levels = sorted(set(values))
    lookup = {lv: i for i, lv in enumerate(levels)}
    return tuple(levels), np.array([lookup[v] for v in values], dtype=np.int64)


def load_graph(edge_file, attr_file, label_attr: str) -> AttributedGraph:
    """Load an edge list and attribute table into an :class:`AttributedGraph`.

    Every node of the attribute file becomes a node (possibly isolated);
    an edge endpoint absent from the attribute file is an error. The label
    attribute is removed from the attribute columns, and an empty label cell
    becomes ``MISSING``.
    """
    raw_edges = read_edge_file(edge_file)
    ids, names, cols = read_attr_file(attr_file)
    if label_attr not in names:
        raise GraphFormatError(f"{attr_file}: no column named {label_attr!r}")

    order = np.argsort(ids)
    ids = ids[order]
    cols = [[c[i] for i in order] for c in cols]

    pos = np.searchsorted(ids, raw_edges.ravel())
    pos = np.minimum(pos, len(ids) - 1)
    found = ids[pos] == raw_edges.ravel()
    if not np.all(found):
        missing = sorted(set(raw_edges.ravel()[~found].tolist()))
        shown = ", ".join(map(str, missing[:20]))
        raise GraphValidationError(
            f"{len(missing)} node(s) in {edge_file} absent from {attr_file}: {shown}")

    li = names.index(label_attr)
    label_vals = cols[li]
    class_names = tuple(sorted({v for v in label_vals if v != ""}))
    cls = {c: i for i, c in enumerate(class_names)}
    labels = np.array([cls[v] if v != "" else MISSING for v in label_vals], dtype=np.int64)

    feat_names, levels, codes = [], [], []
    for name, col in zip(names, cols):
        if name == label_attr:
            continue
        lv, cd = _intern(col)
        feat_names.append(name)
        levels.append(lv)
        codes.append(cd)
    attr_codes = np.stack(codes, axis=1) if codes else np.zeros((len(ids), 0), dtype=np.int64)

    g = from_edges(pos.reshape(-1, 2), len(ids), attr_names=feat_names, attr_levels=levels,
                   attr_codes=attr_codes, labels=labels, class_names=class_names, node_ids=ids)
    if g.dropped_edges:
        logger.info("dropped %d self-loop/duplicate edge(s) from %s", g.dropped_edges, edge_file)
    if len(class_names) < 2:
        logger.warning("label attribute %r has fewer than 2 classes", label_attr)
    return g


def write_graph(g: AttributedGraph, edge_file, attr_file, label_attr: str = "label") -> None:
    """Inverse of :func:`load_graph` (original ids are written)."""
    ids = g.node_ids
    with open(edge_file, "w") as fh:
        fh.write("# undirected edges, one per line\n")
        for v in range(g.n_nodes):
            for u in g.neighbors(v):
                if u > v:
                    fh.write(f"{ids[v]} {ids[u]}\n")
    with open(attr_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", *g.attr_names, label_attr])
        for v in range(g.n_nodes):
            row = [g.attr_levels[a][g.attr_codes[v, a]] for a in range(len(g.attr_names))]
            lab = g.labels[v]
            w.writerow([ids[v], *row, g.class_names[lab] if lab != MISSING else ""])


def giant_component(g: AttributedGraph) -> AttributedGraph:
    """Largest connected component; ties go to the one holding the smallest id."""
    if g.n_nodes == 0:
        raise ValueError("empty graph")
    ncomp, comp = connected_components(g.adjacency(), directed=False)
    if ncomp == 1:
        return g
    sizes = np.bincount(comp)
    # dense indices follow original id order, so the first occurrence of each
    # component label is its minimum id
    first = np.full(ncomp, g.n_nodes)
    np.minimum.at(first, comp, np.arange(g.n_nodes))
    best = min(range(ncomp), key=lambda c: (-sizes[c], first[c]))
    return g.subgraph(np.flatnonzero(comp == best))


def split_labels(g: AttributedGraph, fraction: float, rng_seed) -> LabelSplit:
    """Mark a uniformly random ``ceil(fraction * n)`` subset as observed."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    rng = np.random.default_rng(rng_seed)
    k = math.ceil(fraction * g.n_nodes - 1e-9)
    chosen = rng.choice(g.n_nodes, size=k, replace=False)
    return LabelSplit(observed=np.sort(chosen), n_nodes=g.n_nodes)


def labeled_subgraph(g: AttributedGraph, split: LabelSplit) -> AttributedGraph:
    """Giant component of the subgraph induced by the observed nodes."""
    if len(split.observed) == 0:
        raise ValueError("no labeled giant component")
    return giant_component(g.subgraph(split.observed))


def parent_index(parent: AttributedGraph, child: AttributedGraph) -> np.ndarray:
    """Dense indices in ``parent`` of every node of ``child``."""
    return np.searchsorted(parent.node_ids, child.node_ids)
