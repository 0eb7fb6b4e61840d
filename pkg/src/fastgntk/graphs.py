"""Graph containers, TU-format ingestion and per-node scaling factors."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class Scaling(str, enum.Enum):
    """How the per-node aggregation weights ``c_u`` are chosen."""

    UNIT = "unit"
    INVERSE_DEGREE_PLUS_ONE = "inverse-degree"
    # c_u = 1 / ||[H S^T S (A+I)]_{:,u}||, which makes every aggregated
    # embedding a unit vector
    NORMALIZED = "normalized"


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted graph with nonnegative node features.

    ``adjacency`` is ``N x N`` with zero diagonal; ``features`` is ``d x N``
    with column ``u`` holding the feature vector of node ``u``.
    """

    adjacency: np.ndarray
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        feats = np.asarray(self.features, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        if feats.ndim != 2 or feats.shape[1] != adj.shape[0]:
            raise ValueError(
                f"features must be d x {adj.shape[0]}, got {feats.shape}"
            )
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if not np.all((adj == 0) | (adj == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(feats < 0) or not np.all(np.isfinite(feats)):
            raise ValueError("node features must be finite and nonnegative")
        adj.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", feats)

    @property
    def num_nodes(self):
        return self.adjacency.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[0]

    def degrees(self):
        return self.adjacency.sum(axis=1).astype(np.int64)

    def edges(self):
        """Undirected edge list with ``u < v``."""
        u, v = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(u.tolist(), v.tolist()))

    @classmethod
    def from_edges(cls, num_nodes, edges, features, label=None):
        adj = np.zeros((num_nodes, num_nodes))
        for u, v in edges:
            if u == v:
                continue
            adj[u, v] = adj[v, u] = 1.0
        return cls(adj, np.asarray(features, dtype=np.float64), label)


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple
    feature_dim: int
    name: str = "dataset"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        for i, g in enumerate(graphs):
            if g.feature_dim != self.feature_dim:
                raise ValueError(
                    f"graph {i} has feature dim {g.feature_dim}, "
                    f"dataset expects {self.feature_dim}"
                )
        object.__setattr__(self, "graphs", graphs)

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def max_nodes(self):
        return max(g.num_nodes for g in self.graphs)

    def labels(self):
        """Graph labels as an array; raises if any graph is unlabeled."""
        if any(g.label is None for g in self.graphs):
            raise ValueError(f"dataset {self.name!r} has unlabeled graphs")
        return np.array([g.label for g in self.graphs])


def adjacency_with_self_loops(g):
    """``A + I``: aggregation sums over the neighbourhood and the node itself."""
    return g.adjacency + np.eye(g.num_nodes)


def degree_features(g, max_degree):
    """Replace features by a one-hot encoding of node degree (width ``max_degree + 1``)."""
    deg = g.degrees()
    if deg.size and deg.max() > max_degree:
        raise ValueError(
            f"observed degree {int(deg.max())} exceeds max_degree={max_degree}"
        )
    feats = np.zeros((max_degree + 1, g.num_nodes))
    feats[deg, np.arange(g.num_nodes)] = 1.0
    return Graph(g.adjacency, feats, g.label)


def scaling_diag(g, rule):
    """Diagonal matrix of aggregation weights for the fixed rules."""
    rule = Scaling(rule)
    if rule is Scaling.UNIT:
        return np.eye(g.num_nodes)
    if rule is Scaling.INVERSE_DEGREE_PLUS_ONE:
        return np.diag(1.0 / (g.degrees() + 1.0))
    raise ValueError("normalized scaling depends on the sketch; "
                     "use normalized_scaling_diag")


def normalized_scaling_diag(g, sketch=None):
    """``diag(1 / ||[H S^T S (A+I)]_{:,u}||)``; ``S^T S = I`` when ``sketch`` is None."""
    a1 = adjacency_with_self_loops(g)
    if sketch is None:
        agg = g.features @ a1
    else:
        s = sketch.data
        if s.shape[1] != g.num_nodes:
            raise ValueError(
                f"sketch has {s.shape[1]} columns, graph has {g.num_nodes} nodes"
            )
        agg = (g.features @ s.T) @ (s @ a1)
    norms = np.linalg.norm(agg, axis=0)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ValueError(f"aggregated feature column of node {int(bad[0])} is zero")
    return np.diag(1.0 / norms)


def scaling_matrix(g, rule, sketch=None):
    rule = Scaling(rule)
    if rule is Scaling.NORMALIZED:
        return normalized_scaling_diag(g, sketch)
    return scaling_diag(g, rule)


# --- TU Dortmund text format -------------------------------------------------

def _read_ints(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([int(float(tok)) for tok in line.split(",")])
    return rows


def load_tu_dataset(dir_path, name=None):
    """Load a dataset stored in the TU Dortmund benchmark layout.

    Expects ``{DS}_A.txt`` and ``{DS}_graph_indicator.txt``; node and graph
    labels are optional. Node labels are one-hot encoded; without them nodes
    get one-hot degree features. Asymmetric edges are symmetrized and
    counted in ``metadata["symmetrized_edges"]``.
    """
    dir_path = Path(dir_path)
    if name is None:
        hits = sorted(dir_path.glob("*_graph_indicator.txt"))
        if not hits:
            raise FileNotFoundError(
                f"missing {dir_path}/<DS>_graph_indicator.txt"
            )
        name = hits[0].name[: -len("_graph_indicator.txt")]

    def path_for(suffix, required):
        p = dir_path / f"{name}_{suffix}.txt"
        if required and not p.exists():
            raise FileNotFoundError(f"missing required file {p}")
        return p if p.exists() else None

    edges_path = path_for("A", True)
    indicator_path = path_for("graph_indicator", True)
    node_labels_path = path_for("node_labels", False)
    graph_labels_path = path_for("graph_labels", False)

    indicator = np.array([r[0] for r in _read_ints(indicator_path)], dtype=np.int64)
    if indicator.size == 0:
        raise ValueError(f"{indicator_path} is empty")
    graph_ids = np.unique(indicator)
    num_total = indicator.size

    edge_rows = _read_ints(edges_path)
    edge_set = set()
    for row in edge_rows:
        u, v = row[0] - 1, row[1] - 1
        if not (0 <= u < num_total and 0 <= v < num_total):
            raise ValueError(f"edge ({u + 1}, {v + 1}) references an unknown node")
        if indicator[u] != indicator[v]:
            raise ValueError(f"edge ({u + 1}, {v + 1}) crosses graphs")
        edge_set.add((u, v))
    self_loops = sum(1 for u, v in edge_set if u == v)
    asymmetric = sum(1 for u, v in edge_set if u != v and (v, u) not in edge_set)
    if asymmetric:
        log.warning("%s: symmetrized %d one-directional edges", name, asymmetric)

    node_labels = None
    if node_labels_path is not None:
        node_labels = np.array([r[0] for r in _read_ints(node_labels_path)])
        if node_labels.size != num_total:
            raise ValueError("node label count does not match indicator length")
    graph_labels = None
    if graph_labels_path is not None:
        graph_labels = [r[0] for r in _read_ints(graph_labels_path)]
        if len(graph_labels) != graph_ids.size:
            raise ValueError("graph label count does not match number of graphs")

    # nodes of each graph, in file order
    members = {gid: np.flatnonzero(indicator == gid) for gid in graph_ids}
    local = np.empty(num_total, dtype=np.int64)
    for gid, idx in members.items():
        local[idx] = np.arange(idx.size)

    adjs = {gid: np.zeros((idx.size, idx.size)) for gid, idx in members.items()}
    for u, v in edge_set:
        if u == v:
            continue
        a = adjs[indicator[u]]
        a[local[u], local[v]] = a[local[v], local[u]] = 1.0

    if node_labels is not None:
        values = np.unique(node_labels)
        col = {lab: i for i, lab in enumerate(values.tolist())}
        dim = values.size
    else:
        dim = int(max(a.sum(axis=1).max(initial=0) for a in adjs.values())) + 1

    graphs = []
    for k, gid in enumerate(graph_ids):
        idx = members[gid]
        adj = adjs[gid]
        label = graph_labels[k] if graph_labels is not None else None
        if node_labels is not None:
            feats = np.zeros((dim, idx.size))
            for j, lab in enumerate(node_labels[idx].tolist()):
                feats[col[lab], j] = 1.0
            graphs.append(Graph(adj, feats, label))
        else:
            graphs.append(degree_features(Graph(adj, np.zeros((1, idx.size)), label), dim - 1))

    meta = {"symmetrized_edges": asymmetric, "dropped_self_loops": self_loops}
    return Dataset(tuple(graphs), dim, name, meta)


def save_tu_dataset(ds, dir_path):
    """Write ``ds`` in the TU layout; features must be one-hot node labels."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    name = ds.name
    offset = 0
    with open(dir_path / f"{name}_A.txt", "w") as fa, \
            open(dir_path / f"{name}_graph_indicator.txt", "w") as fi, \
            open(dir_path / f"{name}_node_labels.txt", "w") as fn:
        for k, g in enumerate(ds.graphs, start=1):
            for u, v in g.edges():
                fa.write(f"{u + 1 + offset}, {v + 1 + offset}\n")
                fa.write(f"{v + 1 + offset}, {u + 1 + offset}\n")
            for u in range(g.num_nodes):
                col = g.features[:, u]
                if np.count_nonzero(col) != 1 or col.max() != 1.0:
                    raise ValueError("TU export needs one-hot node features")
                fi.write(f"{k}\n")
                fn.write(f"{int(np.argmax(col))}\n")
            offset += g.num_nodes
    if all(g.label is not None for g in ds.graphs):
        with open(dir_path / f"{name}_graph_labels.txt", "w") as fg:
            for g in ds.graphs:
                fg.write(f"{g.label}\n")


# --- native JSON -------------------------------------------------------------

def dataset_to_json(ds):
    """Serialize to ``{name, feature_dim, graphs: [{n, edges, features, label}]}``.

    ``features`` is node-major: ``features[u]`` is the vector of node ``u``.
    """
    return {
        "name": ds.name,
        "feature_dim": ds.feature_dim,
        "graphs": [
            {
                "n": g.num_nodes,
                "edges": [list(e) for e in g.edges()],
                "features": g.features.T.tolist(),
                "label": g.label,
            }
            for g in ds.graphs
        ],
    }


def dataset_from_json(doc):
    d = int(doc["feature_dim"])
    graphs = []
    for item in doc["graphs"]:
        n = int(item["n"])
        feats = np.asarray(item["features"], dtype=np.float64).reshape(n, d).T
        graphs.append(Graph.from_edges(n, item["edges"], feats, item.get("label")))
    return Dataset(tuple(graphs), d, doc.get("name", "dataset"))


def save_json(ds, path):
    Path(path).write_text(json.dumps(dataset_to_json(ds)))


def load_json(path):
    return dataset_from_json(json.loads(Path(path).read_text()))


def load_dataset(path):
    """Load a JSON file or a TU directory."""
    path = Path(path)
    if path.is_dir():
        return load_tu_dataset(path)
    return load_json(path)


# --- synthetic data ----------------------------------------------------------

def random_graph(rng, num_nodes, feature_dim, edge_prob=0.3, label=None):
    """Erdos-Renyi graph with uniform(0, 1) nonnegative features."""
    upper = np.triu(rng.random((num_nodes, num_nodes)) < edge_prob, k=1)
    adj = (upper | upper.T).astype(np.float64)
    feats = rng.random((feature_dim, num_nodes))
    return Graph(adj, feats, label)


def random_dataset(rng, n, max_nodes, feature_dim, edge_prob=0.3, min_nodes=1,
                   name="synthetic"):
    graphs = [
        random_graph(rng, int(rng.integers(min_nodes, max_nodes + 1)),
                     feature_dim, edge_prob)
        for _ in range(n)
    ]
    return Dataset(tuple(graphs), feature_dim, name)


def fixed_size_dataset(rng, n, num_nodes, feature_dim, edge_prob=0.1,
                       name="synthetic"):
    graphs = [random_graph(rng, num_nodes, feature_dim, edge_prob) for _ in range(n)]
    return Dataset(tuple(graphs), feature_dim, name)
