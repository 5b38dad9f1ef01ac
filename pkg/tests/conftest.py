import numpy as np
import pytest

from desgrada.graph import Graph, GraphDataset


def write_tu(root, name, edges, indicator, labels, attributes=None, node_labels=None):
    """Write a TU directory from 1-indexed rows."""
    root.mkdir(parents=True, exist_ok=True)
    (root / f"{name}_A.txt").write_text("".join(f"{u}, {v}\n" for u, v in edges))
    (root / f"{name}_graph_indicator.txt").write_text("".join(f"{i}\n" for i in indicator))
    (root / f"{name}_graph_labels.txt").write_text("".join(f"{y}\n" for y in labels))
    if attributes is not None:
        (root / f"{name}_node_attributes.txt").write_text(
            "".join(", ".join(str(x) for x in row) + "\n" for row in attributes))
    if node_labels is not None:
        (root / f"{name}_node_labels.txt").write_text("".join(f"{x}\n" for x in node_labels))
    return root


TRIANGLE_EDGES = [(1, 2), (2, 1), (2, 3), (3, 2), (1, 3), (3, 1),
                  (4, 5), (5, 4), (5, 6), (6, 5), (4, 6), (6, 4)]


@pytest.fixture
def two_triangles(tmp_path):
    return write_tu(tmp_path / "TRI", "TRI", TRIANGLE_EDGES, [1, 1, 1, 2, 2, 2], [1, 2])


def random_graph(rng, n, p=0.4, f=3, label=None, index=0):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    return Graph(n, edges, rng.random((n, f)), label, index=index)


def tiny_dataset(seed, count=4, n=(3, 6), f=3, classes=2, name="tiny", tag="source"):
    rng = np.random.default_rng(seed)
    graphs = [random_graph(rng, int(rng.integers(n[0], n[1] + 1)), f=f, label=i % classes, index=i)
              for i in range(count)]
    return GraphDataset(tuple(graphs), classes, f, name, tag)


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


def record(number, title, ok, detail=""):
    ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip()
    print(ACCEPTANCE[number])
    assert ok, ACCEPTANCE[number]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
