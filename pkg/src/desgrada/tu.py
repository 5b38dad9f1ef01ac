"""Reader/writer for the sparse TU text format.

A dataset ``NAME`` lives in one directory as::

    NAME_A.txt                 "u, v" per line, 1-indexed global node ids
    NAME_graph_indicator.txt   graph id (1-indexed) of every node
    NAME_graph_labels.txt      class value of every graph
    NAME_node_attributes.txt   optional, comma-separated reals per node
    NAME_node_labels.txt       optional, integer node label per node
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import Graph, GraphDataset, GraphFormatError, density_scores

DEFAULT_MAX_DEGREE = 50


class TULoadError(FileNotFoundError):
    pass


class TUParseError(GraphFormatError):
    pass


@dataclass
class RawTU:
    """Unprocessed contents of a TU directory, 0-indexed."""

    name: str
    edges: np.ndarray               # [m x 2] global node ids, may contain both directions
    edge_lines: np.ndarray          # source line number of each edge
    indicator: np.ndarray           # graph position (0-based) per node
    graph_labels: np.ndarray        # raw class values per graph
    node_attributes: np.ndarray | None
    node_labels: np.ndarray | None

    @property
    def num_graphs(self) -> int:
        return len(self.graph_labels)


def _path(root: Path, name: str, suffix: str) -> Path:
    return Path(root) / f"{name}_{suffix}.txt"


def _as_int(token: str) -> int:
    try:
        return int(token)
    except ValueError:
        f = float(token)
        if not f.is_integer():
            raise
        return int(f)


def _read_rows(path: Path, kind=float) -> list[list]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = [t.strip() for t in line.split(",")]
            try:
                rows.append([_as_int(t) if kind is int else float(t) for t in tokens])
            except ValueError:
                raise TUParseError(f"{path.name}:{lineno}: non-numeric token in {line!r}") from None
            rows[-1].append(lineno)
    return rows


def read_tu_raw(root, name: str) -> RawTU:
    root = Path(root)
    for suffix in ("A", "graph_indicator", "graph_labels"):
        if not _path(root, name, suffix).is_file():
            raise TULoadError(f"missing {name}_{suffix}.txt")

    indicator_rows = _read_rows(_path(root, name, "graph_indicator"), int)
    indicator = np.array([r[0] for r in indicator_rows], dtype=np.int64)
    if indicator.size == 0:
        raise TUParseError(f"{name}_graph_indicator.txt is empty")
    if indicator.min() < 1:
        raise TUParseError(f"{name}_graph_indicator.txt: graph ids must be 1-indexed")
    label_rows = _read_rows(_path(root, name, "graph_labels"), int)
    graph_labels = np.array([r[0] for r in label_rows], dtype=np.int64)
    if indicator.max() > len(graph_labels):
        raise TUParseError(
            f"{name}_graph_indicator.txt references graph {indicator.max()} "
            f"but only {len(graph_labels)} labels exist"
        )
    n_nodes = len(indicator)

    edge_rows = _read_rows(_path(root, name, "A"), int)
    edges = np.zeros((len(edge_rows), 2), dtype=np.int64)
    lines = np.zeros(len(edge_rows), dtype=np.int64)
    for i, row in enumerate(edge_rows):
        if len(row) != 3:
            raise TUParseError(f"{name}_A.txt:{row[-1]}: expected 'u, v'")
        u, v, lineno = row
        if not (1 <= u <= n_nodes and 1 <= v <= n_nodes):
            raise TUParseError(f"{name}_A.txt:{lineno}: node id outside [1, {n_nodes}]")
        if indicator[u - 1] != indicator[v - 1]:
            raise TUParseError(f"{name}_A.txt:{lineno}: edge ({u}, {v}) crosses graphs")
        edges[i] = (u - 1, v - 1)
        lines[i] = lineno

    attrs = None
    p = _path(root, name, "node_attributes")
    if p.is_file():
        rows = _read_rows(p, float)
        attrs = np.array([r[:-1] for r in rows], dtype=np.float64)
        if len(attrs) != n_nodes:
            raise TUParseError(f"{p.name}: {len(attrs)} rows for {n_nodes} nodes")
    node_labels = None
    p = _path(root, name, "node_labels")
    if p.is_file():
        rows = _read_rows(p, int)
        node_labels = np.array([r[0] for r in rows], dtype=np.int64)
        if len(node_labels) != n_nodes:
            raise TUParseError(f"{p.name}: {len(node_labels)} rows for {n_nodes} nodes")

    return RawTU(name, edges, lines, indicator - 1, graph_labels, attrs, node_labels)


def _minmax(x: np.ndarray) -> np.ndarray:
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    out = np.zeros_like(x)
    ok = span > 0
    out[:, ok] = (x[:, ok] - lo[ok]) / span[ok]
    return out


def _one_hot(values: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((len(values), width))
    out[np.arange(len(values)), np.clip(values, 0, width - 1)] = 1.0
    return out


def load_tudataset(
    root,
    name: str,
    max_degree: int = DEFAULT_MAX_DEGREE,
    num_node_labels: int | None = None,
    class_values: Sequence[int] | None = None,
    domain_tag: str = "source",
    normalize: bool = True,
) -> GraphDataset:
    """Load a TU directory into a :class:`GraphDataset`.

    Node attributes are min-max normalised per column (constant columns map
    to 0); ``normalize=False`` keeps them as stored, which requires them to
    lie in [0, 1] already. Without attributes, node labels become one-hot features, and
    without either the features are one-hot degrees (self-loop included)
    capped at ``max_degree``. Graph labels are remapped to 0-based ids in
    sorted order of ``class_values`` (default: the values present).
    """
    raw = read_tu_raw(root, name)
    n_graphs = raw.num_graphs
    if class_values is None:
        class_values = np.unique(raw.graph_labels)
    class_values = [int(c) for c in class_values]
    remap = {c: i for i, c in enumerate(class_values)}
    unknown = set(np.unique(raw.graph_labels).tolist()) - set(remap)
    if unknown:
        raise TUParseError(f"{name}_graph_labels.txt: labels {sorted(unknown)} not in class set")

    counts = np.bincount(raw.indicator, minlength=n_graphs)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    if np.any(np.diff(raw.indicator) < 0):
        raise TUParseError(f"{name}_graph_indicator.txt: nodes must be grouped by graph")

    # deduplicate undirected edges, drop explicit self-loops (re-added implicitly)
    e = raw.edges[raw.edges[:, 0] != raw.edges[:, 1]]
    e = np.unique(np.sort(e, axis=1), axis=0)
    edge_graph = raw.indicator[e[:, 0]]

    deg_all = np.ones(len(raw.indicator), dtype=np.int64)
    np.add.at(deg_all, e[:, 0], 1)
    np.add.at(deg_all, e[:, 1], 1)

    blocks = []
    if raw.node_attributes is not None:
        blocks.append(_minmax(raw.node_attributes) if normalize else raw.node_attributes.astype(np.float64))
    if raw.node_labels is not None and (raw.node_attributes is None or num_node_labels is not None):
        width = num_node_labels or int(raw.node_labels.max() - raw.node_labels.min() + 1)
        blocks.append(_one_hot(raw.node_labels - raw.node_labels.min(), width))
    if not blocks:
        blocks.append(_one_hot(np.minimum(deg_all, max_degree), max_degree + 1))
    feats = np.concatenate(blocks, axis=1)

    order = np.argsort(edge_graph, kind="stable")
    e, edge_graph = e[order], edge_graph[order]
    edge_bounds = np.searchsorted(edge_graph, np.arange(n_graphs + 1))
    graphs = []
    for gi in range(n_graphs):
        lo, hi = offsets[gi], offsets[gi + 1]
        if hi == lo:
            continue
        ge = e[edge_bounds[gi]:edge_bounds[gi + 1]] - lo
        graphs.append(Graph(int(hi - lo), ge, feats[lo:hi], remap[int(raw.graph_labels[gi])], index=gi))
    return GraphDataset(tuple(graphs), len(class_values), feats.shape[1], name, domain_tag)


def write_tu_subsets(root, name: str, groups: Sequence[Sequence[int]], out_root, out_names: Sequence[str]) -> list[Path]:
    """Copy the raw rows of selected graphs (by original index) into new TU directories."""
    raw = read_tu_raw(root, name)
    counts = np.bincount(raw.indicator, minlength=raw.num_graphs)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    written = []
    for group, out_name in zip(groups, out_names):
        out_dir = Path(out_root) / out_name
        out_dir.mkdir(parents=True, exist_ok=True)
        node_ids = np.concatenate([np.arange(offsets[g], offsets[g + 1]) for g in group]) if len(group) else np.array([], dtype=np.int64)
        new_id = np.full(len(raw.indicator), -1, dtype=np.int64)
        new_id[node_ids] = np.arange(len(node_ids))
        keep = new_id[raw.edges[:, 0]] >= 0
        edges = new_id[raw.edges[keep]]
        # preserve group order of graphs
        graph_new = {g: i for i, g in enumerate(group)}
        indicator = np.array([graph_new[g] + 1 for g in raw.indicator[node_ids]], dtype=np.int64)
        _write_lines(out_dir / f"{out_name}_A.txt", (f"{u + 1}, {v + 1}" for u, v in edges))
        _write_lines(out_dir / f"{out_name}_graph_indicator.txt", (str(i) for i in indicator))
        _write_lines(out_dir / f"{out_name}_graph_labels.txt", (str(raw.graph_labels[g]) for g in group))
        if raw.node_attributes is not None:
            _write_lines(out_dir / f"{out_name}_node_attributes.txt",
                         (", ".join(repr(float(x)) for x in row) for row in raw.node_attributes[node_ids]))
        if raw.node_labels is not None:
            _write_lines(out_dir / f"{out_name}_node_labels.txt", (str(x) for x in raw.node_labels[node_ids]))
        written.append(out_dir)
    return written


def write_tudataset(ds: GraphDataset, out_dir, name: str | None = None) -> Path:
    """Write an in-memory dataset; features are stored as node attributes."""
    name = name or ds.name
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    edges, indicator, attrs, labels = [], [], [], []
    offset = 0
    for gi, g in enumerate(ds.graphs):
        for u, v in g.edges:
            edges.append(f"{u + offset + 1}, {v + offset + 1}")
            edges.append(f"{v + offset + 1}, {u + offset + 1}")
        indicator.extend([str(gi + 1)] * g.node_count)
        attrs.extend(", ".join(repr(float(x)) for x in row) for row in g.features)
        labels.append(str(g.label if g.label is not None else 0))
        offset += g.node_count
    _write_lines(out_dir / f"{name}_A.txt", edges)
    _write_lines(out_dir / f"{name}_graph_indicator.txt", indicator)
    _write_lines(out_dir / f"{name}_graph_labels.txt", labels)
    _write_lines(out_dir / f"{name}_node_attributes.txt", attrs)
    return out_dir


def _write_lines(path: Path, lines) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    os.replace(tmp, path)


def directory_fingerprint(root, name: str) -> str:
    """SHA-256 over the dataset's TU files (sorted by filename)."""
    h = hashlib.sha256()
    for p in sorted(Path(root).glob(f"{name}_*.txt")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_partition_manifest(out_root, name: str, metric: str, k: int, parts, seed: int | None = None) -> Path:
    """``manifest.json`` with the per-chunk score ranges of a density partition."""
    chunks = []
    for i, part in enumerate(parts):
        scores = density_scores(part, metric)
        chunks.append({
            "name": f"{name}_P{i}",
            "graphs": len(part),
            "score_min": float(scores.min()),
            "score_max": float(scores.max()),
            "graph_indices": [g.index for g in part.graphs],
        })
    manifest = {"dataset": name, "metric": metric, "k": k, "seed": seed, "chunks": chunks}
    path = Path(out_root) / "manifest.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path
