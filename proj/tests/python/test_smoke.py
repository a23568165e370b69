import itertools
import json
import math

import networkx as nx
import numpy as np
import pytest

import ccgl


def test_pearson_hand_value():
    view = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 2.0], [4.0, 5.0]])
    r = ccgl.pearson_matrix(view)
    assert r[0, 1] == pytest.approx(6.0 / math.sqrt(45.0), rel=1e-14)
    assert np.allclose(r, np.corrcoef(view, rowvar=False), atol=1e-14)


def test_partial_correlation_matches_numpy_precision():
    rng = np.random.default_rng(0)
    view = rng.standard_normal((300, 5)) @ (rng.standard_normal((5, 5)) + 2 * np.eye(5))
    prec = np.linalg.inv(np.cov(view, rowvar=False))
    d = np.sqrt(np.diag(prec))
    expected = -prec / np.outer(d, d)
    np.fill_diagonal(expected, 1.0)
    assert np.allclose(ccgl.partial_corr_matrix(view, 0.0), expected, atol=1e-10)


def test_laplacian_spectrum():
    a = np.array([[0.0, 0.4, 0.0], [0.4, 0.0, 0.7], [0.0, 0.7, 0.0]])
    lap = ccgl.normalized_laplacian(a)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    assert np.allclose(lap, np.eye(3) - d[:, None] * a * d[None, :], atol=1e-15)
    assert ccgl.largest_eigenvalue(lap) == pytest.approx(np.linalg.eigvalsh(lap).max(), abs=1e-5)


def test_contrastive_loss_of_identical_embeddings_is_log3():
    e = np.tile([[1.0, 0.0, 0.0]], (4, 1))
    m = ccgl.similarity_matrix(e)
    assert m.shape == (4, 4)
    assert ccgl.contrastive_loss(m, 0.1) == pytest.approx(math.log(3.0), abs=1e-12)


def test_knn_edges_have_fixed_out_degree():
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((12, 3))
    edges = ccgl.knn_edges(feats, 4)
    assert len(edges) == 48
    g = nx.DiGraph(edges)
    assert all(d == 4 for _, d in g.out_degree())


def test_auc_matches_pair_count():
    rng = np.random.default_rng(2)
    scores = rng.integers(0, 5, 30).astype(float).tolist()
    labels = rng.integers(0, 2, 30).tolist()
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    assert ccgl.auc(scores, labels) == pytest.approx(wins / (len(pos) * len(neg)), abs=1e-15)


def test_errors_surface_as_value_errors():
    with pytest.raises(ccgl.Error):
        ccgl.pearson_matrix(np.ones((5, 3)))
    assert issubclass(ccgl.Error, ValueError)


def test_synth_cohort_is_deterministic():
    a = ccgl.synth_cohort(8, 6, 120, seed=5)
    b = ccgl.synth_cohort(8, 6, 120, seed=5)
    assert len(a) == 8
    assert a[0]["series"].shape == (120, 6)
    assert all(np.array_equal(x["series"], y["series"]) for x, y in zip(a, b))
    assert {p["label"] for p in a} == {0, 1}


def test_tiny_pipeline_writes_graphml(tmp_path):
    cfg = json.loads(ccgl.default_config())
    cfg["data"]["synth"].update(n_patients=24, n_rois=8, n_timepoints=160)
    cfg["edge_policy"]["per_node_top"] = 3
    cfg["encoder"].update(hidden=[8, 8], embedding_dim=8)
    cfg["cgl"]["epochs"] = 2
    cfg["dgc"].update(hidden=[8, 8], epochs=3, k=5)
    cfg["seeds"] = [0]
    cfg["knn_baseline_k"] = 3
    report = ccgl.run_pipeline(json.dumps(cfg), str(tmp_path))
    assert len(report["model"]["runs"]) == 1
    assert 0.0 <= report["model"]["auc"]["mean"] <= 1.0
    g = nx.read_graphml(tmp_path / "seed_0" / "population_cgl.graphml")
    assert g.number_of_nodes() == 24
    assert g.is_directed()
    assert all(d == 2 for _, d in g.out_degree())
