"""Graph containers, density partitioning, degree sets and mini-batch assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised when graph data violates a structural invariant."""


@dataclass(frozen=True, eq=False)
class Graph:
    """An undirected graph with node features in [0, 1] and an optional label.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v`` and
    never contains self-loops; every node carries an implicit self-loop that
    is counted in ``degrees``.
    """

    node_count: int
    edges: np.ndarray
    features: np.ndarray
    label: int | None = None
    index: int = 0
    degrees: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.node_count)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise GraphFormatError("edge endpoint outside [0, node_count)")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise GraphFormatError("self-loops are implicit; do not store them")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        edges = np.stack([lo, hi], axis=1)
        if len(np.unique(edges, axis=0)) != len(edges):
            raise GraphFormatError("duplicate undirected edge")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise GraphFormatError(f"features must be [{n} x f], got {feats.shape}")
        if feats.size and (feats.min() < 0.0 or feats.max() > 1.0):
            raise GraphFormatError("features must lie in [0, 1]")
        deg = np.ones(n, dtype=np.int64)
        np.add.at(deg, edges[:, 0], 1)
        np.add.at(deg, edges[:, 1], 1)
        edges.setflags(write=False)
        feats.setflags(write=False)
        deg.setflags(write=False)
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "degrees", deg)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def adjacency(self, mode: str = "sym") -> sp.csr_matrix:
        """Aggregation matrix over A + I.

        ``sym`` gives D^-1/2 (A + I) D^-1/2, ``sum`` the raw A + I.
        """
        return _aggregation_matrix(self.node_count, self.edges, self.degrees, mode)

    def density(self, metric: str) -> float:
        if metric == "node":
            return float(self.node_count)
        if metric == "edge":
            # average degree before self-loops
            return 2.0 * self.edge_count / self.node_count if self.node_count else 0.0
        raise ValueError(f"unknown density metric {metric!r}")


def _aggregation_matrix(n, edges, degrees, mode):
    rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
    if mode == "sym":
        inv = 1.0 / np.sqrt(degrees.astype(np.float64))
        vals = inv[rows] * inv[cols]
    elif mode == "sum":
        vals = np.ones(len(rows))
    else:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass(frozen=True, eq=False)
class GraphDataset:
    graphs: tuple[Graph, ...]
    num_classes: int
    feature_dim: int
    name: str = "dataset"
    domain_tag: Literal["source", "target"] = "source"

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        for g in self.graphs:
            if g.feature_dim != self.feature_dim:
                raise GraphFormatError(
                    f"graph {g.index} has feature_dim {g.feature_dim}, expected {self.feature_dim}"
                )
            if g.label is not None and not 0 <= g.label < self.num_classes:
                raise GraphFormatError(f"graph {g.index} label {g.label} out of range")

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def labels(self) -> np.ndarray:
        if any(g.label is None for g in self.graphs):
            raise ValueError(f"dataset {self.name!r} has unlabeled graphs")
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    @property
    def has_labels(self) -> bool:
        return all(g.label is not None for g in self.graphs)

    def subset(self, positions: Sequence[int], name: str | None = None, domain_tag=None) -> "GraphDataset":
        return GraphDataset(
            graphs=tuple(self.graphs[i] for i in positions),
            num_classes=self.num_classes,
            feature_dim=self.feature_dim,
            name=name or self.name,
            domain_tag=domain_tag or self.domain_tag,
        )

    def with_tag(self, domain_tag: str) -> "GraphDataset":
        return GraphDataset(self.graphs, self.num_classes, self.feature_dim, self.name, domain_tag)


@dataclass(frozen=True)
class DegreeTable:
    degrees: tuple[int, ...]
    origin: Literal["source", "target-extension"] = "source"

    def __post_init__(self):
        d = tuple(int(x) for x in self.degrees)
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError("degrees must be strictly increasing")
        object.__setattr__(self, "degrees", d)

    def __contains__(self, d) -> bool:
        return int(d) in set(self.degrees)

    def __len__(self):
        return len(self.degrees)

    def as_array(self) -> np.ndarray:
        return np.array(self.degrees, dtype=np.int64)


def collect_degree_set(ds: GraphDataset | Sequence[Graph]) -> DegreeTable:
    """Sorted distinct union of node degrees across all graphs."""
    graphs = list(ds)
    if not graphs:
        raise ValueError("cannot collect degrees of an empty dataset")
    allv = np.unique(np.concatenate([g.degrees for g in graphs]))
    return DegreeTable(tuple(int(x) for x in allv))


def density_scores(ds: GraphDataset, metric: str) -> np.ndarray:
    return np.array([g.density(metric) for g in ds.graphs], dtype=np.float64)


def partition_by_density(ds: GraphDataset, metric: str, k: int) -> list[GraphDataset]:
    """Split into ``k`` equal-count chunks ordered by density score.

    Graphs are sorted ascending by score (stable, so ties keep their original
    order) and cut into contiguous chunks whose sizes differ by at most one.
    """
    if metric not in ("node", "edge"):
        raise ValueError(f"metric must be 'node' or 'edge', got {metric!r}")
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(ds):
        raise ValueError(f"k={k} exceeds number of graphs ({len(ds)})")
    order = np.argsort(density_scores(ds, metric), kind="stable")
    return [
        ds.subset(chunk.tolist(), name=f"{ds.name}_P{i}")
        for i, chunk in enumerate(np.array_split(order, k))
    ]


class GraphBatch:
    """Block-diagonal union of graphs used for vectorised forward passes."""

    def __init__(self, graphs: Sequence[Graph], aggregation: str = "sym"):
        graphs = list(graphs)
        if not graphs:
            raise ValueError("empty batch")
        self.graphs = graphs
        self.sizes = np.array([g.node_count for g in graphs], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.num_graphs = len(graphs)
        self.num_nodes = n = int(self.offsets[-1])
        self.degrees = np.concatenate([g.degrees for g in graphs])
        self.graph_of_node = np.repeat(np.arange(self.num_graphs), self.sizes)
        edges = np.concatenate([g.edges + off for g, off in zip(graphs, self.offsets[:-1])])
        self.adj = _aggregation_matrix(n, edges, self.degrees, aggregation)
        # A + I is symmetric under both normalisations
        self.adj_t = self.adj
        self.nnz = int(self.adj.nnz)
        pool_vals = 1.0 / self.sizes[self.graph_of_node]
        self.pool = sp.csr_matrix(
            (pool_vals, (self.graph_of_node, np.arange(n))),
            shape=(self.num_graphs, n),
        )
        self.pool_t = self.pool.T.tocsr()

    def node_mask(self, graph_mask: np.ndarray) -> np.ndarray:
        return np.asarray(graph_mask, dtype=bool)[self.graph_of_node]
