import numpy as np
import pytest

from conftest import TRIANGLE_EDGES, write_tu
from desgrada.graph import GraphFormatError, collect_degree_set
from desgrada.synthetic import domain_shift_benchmark
from desgrada.tu import TULoadError, TUParseError, load_tudataset, write_tu_subsets, write_tudataset


def test_two_triangles(two_triangles):
    ds = load_tudataset(two_triangles, "TRI")
    assert len(ds) == 2
    assert sorted(g.label for g in ds) == [0, 1]
    for g in ds:
        assert g.node_count == 3
        assert g.degrees.tolist() == [3, 3, 3]
    assert collect_degree_set(ds).degrees == (3,)


def test_degree_one_hot_without_attributes(two_triangles):
    ds = load_tudataset(two_triangles, "TRI", max_degree=5)
    assert ds.feature_dim == 6
    for g in ds:
        np.testing.assert_array_equal(g.features.argmax(axis=1), [3, 3, 3])
    capped = load_tudataset(two_triangles, "TRI", max_degree=2)
    for g in capped:
        np.testing.assert_array_equal(g.features.argmax(axis=1), [2, 2, 2])


def test_missing_edge_file(tmp_path):
    with pytest.raises(TULoadError, match="missing X_A.txt"):
        load_tudataset(tmp_path, "X")


def test_constant_attribute_normalises_to_zero(tmp_path):
    root = write_tu(tmp_path / "C", "C", TRIANGLE_EDGES, [1, 1, 1, 2, 2, 2], [0, 1],
                    attributes=[[5.0, i] for i in range(6)])
    ds = load_tudataset(root, "C")
    feats = np.concatenate([g.features for g in ds])
    np.testing.assert_array_equal(feats[:, 0], 0.0)
    np.testing.assert_allclose(feats[:, 1], np.arange(6) / 5)


def test_edge_outside_graph_reports_line(tmp_path):
    edges = [(1, 2), (2, 1), (2, 3)]
    root = write_tu(tmp_path / "B", "B", edges, [1, 1, 2, 2], [0, 1])
    with pytest.raises(GraphFormatError, match="B_A.txt:3"):
        load_tudataset(root, "B")


def test_non_numeric_token(tmp_path):
    root = write_tu(tmp_path / "N", "N", [(1, 2)], [1, 1], [0])
    (root / "N_A.txt").write_text("1, x\n")
    with pytest.raises(TUParseError):
        load_tudataset(root, "N")


def test_round_trip_of_written_dataset(tmp_path):
    src, _ = domain_shift_benchmark(0, n_graphs=6, degree_scale=24.0)
    write_tudataset(src, tmp_path / "S", "S")
    back = load_tudataset(tmp_path / "S", "S", normalize=False)
    assert len(back) == len(src)
    for a, b in zip(src, back):
        np.testing.assert_array_equal(a.edges, b.edges)
        np.testing.assert_array_equal(a.features, b.features)
        assert a.label == b.label


def test_subsets_preserve_rows(two_triangles, tmp_path):
    (out,) = write_tu_subsets(two_triangles, "TRI", [[1]], tmp_path / "out", ["TRI_P0"])
    ds = load_tudataset(out, "TRI_P0", class_values=[1, 2])
    assert len(ds) == 1 and ds.graphs[0].label == 1
    assert ds.graphs[0].edge_count == 3
