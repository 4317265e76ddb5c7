import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pathgpa.graphs import (ExpressionTable, FormatError, Pathway, PathwayCatalog, build_adjacency_mask,
                            build_dataset, build_node_features, compute_edge_weights, laplacian, load_archive,
                            load_catalog, load_expression, normalize_adjacency, write_archive)


def _catalog():
    return PathwayCatalog([
        Pathway("P1", "alpha", ("g1", "g2", "g3")),
        Pathway("P2", "beta", ("g3", "g4")),
        Pathway("P3", "gamma", ("g5", "g6")),
    ])


def _table():
    vals = np.arange(12, dtype=float).reshape(6, 2)
    return ExpressionTable([f"g{i}" for i in range(1, 7)], ["s1", "s2"], vals)


def test_mask_marks_shared_genes_only():
    m = build_adjacency_mask(_catalog())
    assert m[0, 1] and m[1, 0]
    assert not m[0, 2] and not m[1, 2]
    assert not m.diagonal().any()


def test_features_are_placed_in_universe_columns():
    x, missing = build_node_features(_table(), _catalog(), "s1")
    assert missing == 0
    assert x.shape == (3, 6)
    np.testing.assert_array_equal(x[1], [0, 0, 4, 6, 0, 0])


def test_missing_genes_are_imputed_and_counted(caplog):
    cat = PathwayCatalog([Pathway("P1", "a", ("g1", "zz"))])
    x, missing = build_node_features(_table(), cat, "s1")
    assert missing == 1
    np.testing.assert_array_equal(x, [[0.0, 0.0]])


def test_edge_weights_gaussian_kernel():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]])
    mask = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=bool)
    w = compute_edge_weights(x, mask)
    assert w[0, 1] == pytest.approx(np.exp(-1.0))
    assert w[1, 2] == pytest.approx(np.exp(-10.0))
    assert w[0, 2] == 0.0
    np.testing.assert_array_equal(w, w.T)


def test_normalized_adjacency_of_empty_graph_is_identity():
    np.testing.assert_allclose(normalize_adjacency(np.zeros((3, 3))), np.eye(3))


def test_normalization_rejects_negative_weights():
    with pytest.raises(ValueError):
        normalize_adjacency(np.array([[0.0, -1.0], [-1.0, 0.0]]))


@given(st.integers(2, 7), st.integers(0, 1000))
def test_normalized_adjacency_symmetric_with_bounded_spectrum(n, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(n, n))
    w = np.triu(w, 1)
    w = w + w.T
    a = normalize_adjacency(w)
    np.testing.assert_allclose(a, a.T, atol=1e-14)
    ev = np.linalg.eigvalsh(a)
    assert ev.max() <= 1 + 1e-10 and ev.min() >= -1 - 1e-10


@given(st.integers(2, 7), st.integers(0, 1000))
def test_laplacian_rows_sum_to_zero(n, seed):
    w = np.random.default_rng(seed).uniform(size=(n, n))
    w = w + w.T
    np.fill_diagonal(w, 0)
    np.testing.assert_allclose(laplacian(w).sum(axis=1), 0, atol=1e-12)


def test_table_rejects_negative_and_duplicates():
    with pytest.raises(FormatError):
        ExpressionTable(["a", "b"], ["s"], [[1.0], [-1.0]])
    with pytest.raises(FormatError):
        ExpressionTable(["a", "a"], ["s"], [[1.0], [1.0]])


def test_catalog_rejects_small_pathway():
    with pytest.raises(FormatError):
        PathwayCatalog([Pathway("P", "x", ("g1", "g1"))])


def test_loader_reports_line_numbers(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("gene_id\ts1\ng1\t1.0\ng2\tabc\n")
    with pytest.raises(FormatError, match=":3:"):
        load_expression(p)
    c = tmp_path / "c.tsv"
    c.write_text("P1\tname\tg1\n")
    with pytest.raises(FormatError, match=":1:"):
        load_catalog(c)


def test_archive_round_trip(tmp_path):
    severity = {"s1": 0.25, "s2": 0.75}
    write_archive(tmp_path, _table(), _catalog(), severity)
    table, catalog, sev = load_archive(tmp_path)
    np.testing.assert_array_equal(table.values, _table().values)
    assert catalog.ids == ["P1", "P2", "P3"]
    assert sev == severity


def test_dataset_skips_unlabelled_subjects():
    ds = build_dataset(_table(), _catalog(), {"s2": 1.0})
    assert ds.subject_ids == ["s2"]
    assert ds.features.shape == (1, 3, 6)


def test_dataset_rejects_unknown_severity_subject():
    with pytest.raises(FormatError):
        build_dataset(_table(), _catalog(), {"s9": 1.0})


def test_kernel_transforms_change_weights_not_features():
    raw = build_dataset(_table(), _catalog(), {"s1": 0.0, "s2": 1.0})
    logged = build_dataset(_table(), _catalog(), {"s1": 0.0, "s2": 1.0}, log1p=True)
    np.testing.assert_array_equal(raw.features, logged.features)
    assert not np.array_equal(raw.weights, logged.weights)
