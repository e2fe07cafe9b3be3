"""Aggregated node features.

Column order is fixed: intercept, then one one-hot block per self attribute
(levels in interned order), then neighbour attribute-value proportions, then
neighbour label proportions, each in the order a ``FeatureSpec`` lists them.

``neighbor_mask`` restricts which neighbours exist for aggregation (the
harness passes the observed nodes so that training and prediction features
agree); ``visibility`` says whose labels may be read.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import MISSING, AttributedGraph, LabelSplit


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    self_attrs: tuple[str, ...] = ()
    neighbor_attr_props: tuple[tuple[str, str], ...] = ()
    neighbor_label_props: tuple[int, ...] = ()
    include_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "self_attrs", tuple(self.self_attrs))
        object.__setattr__(self, "neighbor_attr_props",
                           tuple((str(a), str(v)) for a, v in self.neighbor_attr_props))
        object.__setattr__(self, "neighbor_label_props",
                           tuple(int(c) for c in self.neighbor_label_props))

    def to_json(self) -> str:
        return json.dumps({
            "include_intercept": self.include_intercept,
            "self_attrs": list(self.self_attrs),
            "neighbor_attr_props": [list(p) for p in self.neighbor_attr_props],
            "neighbor_label_props": list(self.neighbor_label_props),
        }, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FeatureSpec":
        d = json.loads(text)
        unknown = set(d) - {"include_intercept", "self_attrs", "neighbor_attr_props",
                            "neighbor_label_props"}
        if unknown:
            raise ConfigurationError(f"unknown feature-spec keys: {sorted(unknown)}")
        return cls(
            self_attrs=d.get("self_attrs", ()),
            neighbor_attr_props=d.get("neighbor_attr_props", ()),
            neighbor_label_props=d.get("neighbor_label_props", ()),
            include_intercept=bool(d.get("include_intercept", True)),
        )


@dataclass(frozen=True)
class FeatureLayout:
    """A spec resolved against one graph's attribute tables."""

    names: tuple[str, ...]
    intercept: int | None
    self_blocks: tuple[tuple[int, int, int], ...]  # (attr index, start, width)
    nbr_attrs: tuple[tuple[int, int], ...]  # (attr index, level code)
    nbr_labels: tuple[int, ...]
    penalized: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return len(self.names)


def resolve(spec: FeatureSpec, g: AttributedGraph) -> FeatureLayout:
    names, blocks, nbr_attrs = [], [], []
    intercept = None
    if spec.include_intercept:
        intercept = 0
        names.append("intercept")
    for a_name in spec.self_attrs:
        a = _attr(g, a_name)
        levels = g.attr_levels[a]
        blocks.append((a, len(names), len(levels)))
        names.extend(f"{a_name}={lv}" for lv in levels)
    for a_name, value in spec.neighbor_attr_props:
        a = _attr(g, a_name)
        try:
            code = g.attr_levels[a].index(value)
        except ValueError:
            raise ConfigurationError(f"attribute {a_name!r} has no value {value!r}") from None
        nbr_attrs.append((a, code))
        names.append(f"nbr_prop[{a_name}={value}]")
    for c in spec.neighbor_label_props:
        if not 0 <= c < g.n_classes:
            raise ConfigurationError(f"class index {c} out of range for {g.n_classes} classes")
        names.append(f"nbr_label_prop[{g.class_names[c]}]")
    penalized = np.ones(len(names), dtype=bool)
    if intercept is not None:
        penalized[intercept] = False
    return FeatureLayout(tuple(names), intercept, tuple(blocks), tuple(nbr_attrs),
                         spec.neighbor_label_props, penalized)


def _attr(g, name):
    try:
        return g.attr_index(name)
    except KeyError:
        raise ConfigurationError(f"unknown attribute {name!r}") from None


def default_spec(g: AttributedGraph) -> FeatureSpec:
    """Intercept, self one-hots, neighbour value and label proportions.

    The last level of each neighbour-proportion group is left out so that
    the proportion groups are not collinear with the intercept.
    """
    nbr = [(name, lv) for a, name in enumerate(g.attr_names) for lv in g.attr_levels[a][:-1]]
    return FeatureSpec(
        self_attrs=g.attr_names,
        neighbor_attr_props=nbr,
        neighbor_label_props=range(g.n_classes - 1),
        include_intercept=True,
    )


def feature_names(spec: FeatureSpec, g: AttributedGraph) -> tuple[str, ...]:
    return resolve(spec, g).names


def _visible(g, visibility):
    if visibility is None:
        vis = np.ones(g.n_nodes, dtype=bool)
    elif isinstance(visibility, LabelSplit):
        vis = visibility.mask
    else:
        vis = np.asarray(visibility, dtype=bool)
    return vis & (g.labels != MISSING)


def _fill(layout, g, v, nbrs, label_vis):
    """Feature row of ``v`` aggregating over the neighbour array ``nbrs``."""
    x = np.zeros(layout.d)
    if layout.intercept is not None:
        x[layout.intercept] = 1.0
    for a, start, _ in layout.self_blocks:
        x[start + g.attr_codes[v, a]] = 1.0
    col = layout.d - len(layout.nbr_labels) - len(layout.nbr_attrs)
    for a, code in layout.nbr_attrs:
        if len(nbrs):
            x[col] = np.mean(g.attr_codes[nbrs, a] == code)
        col += 1
    lab = g.labels[nbrs[label_vis[nbrs]]] if len(nbrs) else nbrs
    for c in layout.nbr_labels:
        if len(lab):
            x[col] = np.mean(lab == c)
        col += 1
    return x


def build_features(g: AttributedGraph, spec: FeatureSpec, v: int, label_visibility=None,
                   neighbor_mask=None) -> np.ndarray:
    """Exact feature vector of node ``v``."""
    layout = resolve(spec, g)
    if not g.has_node(v):
        raise ValueError(f"node {v!r} not in graph")
    nbrs = g.neighbors(v)
    if neighbor_mask is not None:
        nbrs = nbrs[np.asarray(neighbor_mask, dtype=bool)[nbrs]]
    return _fill(layout, g, v, nbrs, _visible(g, label_visibility))


def build_features_stochastic(g: AttributedGraph, spec: FeatureSpec, v: int, label_visibility,
                              k: int = 50, rng_seed=None, neighbor_mask=None) -> np.ndarray:
    """Features with proportions over ``min(k, d_v)`` neighbours drawn without replacement."""
    if k < 1:
        raise ValueError("k must be positive")
    layout = resolve(spec, g)
    if not g.has_node(v):
        raise ValueError(f"node {v!r} not in graph")
    nbrs = g.neighbors(v)
    if neighbor_mask is not None:
        nbrs = nbrs[np.asarray(neighbor_mask, dtype=bool)[nbrs]]
    if len(nbrs) > k:
        rng = np.random.default_rng(rng_seed)
        nbrs = np.sort(rng.choice(nbrs, size=k, replace=False))
    return _fill(layout, g, v, nbrs, _visible(g, label_visibility))


def feature_matrix(g: AttributedGraph, spec: FeatureSpec, nodes=None, label_visibility=None,
                   neighbor_mask=None) -> np.ndarray:
    """Exact features of ``nodes`` (default: all) as a ``(len(nodes), d)`` array."""
    layout = resolve(spec, g)
    nodes = np.arange(g.n_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    X = np.zeros((len(nodes), layout.d))
    if layout.intercept is not None:
        X[:, layout.intercept] = 1.0
    for a, start, _ in layout.self_blocks:
        X[np.arange(len(nodes)), start + g.attr_codes[nodes, a]] = 1.0
    if not layout.nbr_attrs and not layout.nbr_labels:
        return X
    A = g.adjacency()[nodes]
    present = np.ones(g.n_nodes, dtype=bool) if neighbor_mask is None else np.asarray(neighbor_mask, dtype=bool)
    n_nbr = A @ present.astype(float)
    col = layout.d - len(layout.nbr_labels) - len(layout.nbr_attrs)
    with np.errstate(invalid="ignore", divide="ignore"):
        for a, code in layout.nbr_attrs:
            hits = A @ (present & (g.attr_codes[:, a] == code)).astype(float)
            X[:, col] = np.where(n_nbr > 0, hits / n_nbr, 0.0)
            col += 1
        lab_ok = present & _visible(g, label_visibility)
        n_lab = A @ lab_ok.astype(float)
        for c in layout.nbr_labels:
            hits = A @ (lab_ok & (g.labels == c)).astype(float)
            X[:, col] = np.where(n_lab > 0, hits / n_lab, 0.0)
            col += 1
    return X
