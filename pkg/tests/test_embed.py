import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plcgrid import embed
from plcgrid.acceptance import brute_force_dbscan, same_partition
from plcgrid.core import N_CHANNELS


def silhouette(points, labels):
    d = np.sqrt(((points[:, None] - points[None]) ** 2).sum(-1))
    s = []
    for i, l in enumerate(labels):
        same = (labels == l) & (np.arange(len(labels)) != i)
        a = d[i, same].mean()
        b = min(d[i, labels == o].mean() for o in set(labels.tolist()) - {l})
        s.append((b - a) / max(a, b))
    return float(np.mean(s))


def blobs(n_per=20, sigma=0.1, sep=10.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.zeros((3, N_CHANNELS))
    for k in range(3):
        centers[k, k] = sep
    X = np.concatenate([c + sigma * rng.normal(size=(n_per, N_CHANNELS)) for c in centers])
    return X, np.repeat(np.arange(3), n_per)


def test_pca_constant_rows():
    X = np.ones((10, N_CHANNELS))
    _, var, _ = embed.pca(X, 3)
    assert np.all(var == 0)


def test_pca_rank_one():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 1)) * rng.normal(size=(1, N_CHANNELS))
    _, var, _ = embed.pca(X, 5)
    assert var[0] / var.sum() == pytest.approx(1.0)


def test_pca_total_variance():
    X = np.random.default_rng(1).normal(size=(50, N_CHANNELS))
    comps, var, proj = embed.pca(X, 50)
    total = np.trace(np.cov(X, rowvar=False))
    assert abs(var.sum() - total) <= 1e-6 * max(1.0, total)
    assert np.allclose(comps @ comps.T, np.eye(50), atol=1e-10)
    assert proj.shape == (50, 50)


def test_components_for_variance():
    X = np.zeros((10, N_CHANNELS))
    X[:, 0] = np.arange(10)
    assert embed.components_for_variance(X, 0.95) == 1
    assert embed.components_for_variance(np.ones((5, N_CHANNELS))) == 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tsne_duplicates_stay_together(seed):
    X, _ = blobs(seed=seed)
    X = np.vstack([X, X[:1]])
    res = embed.tsne(X, perplexity=15, seed=seed)
    p = res.points
    diameter = np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1)).max()
    assert np.linalg.norm(p[0] - p[-1]) <= 0.01 * diameter


def test_tsne_separates_blobs_and_descends():
    X, labels = blobs()
    res = embed.tsne(X, perplexity=15, seed=0)
    assert np.all(np.isfinite(res.points))
    assert silhouette(res.points, labels) >= 0.8
    assert all(v >= 0 for v in res.kl_trace)
    end_exag = res.kl_iterations.index(250)
    assert res.kl_trace[-1] <= res.kl_trace[end_exag]


def test_tsne_deterministic():
    X, _ = blobs(n_per=10)
    a = embed.tsne(X, perplexity=5, iters=100, seed=3).points
    b = embed.tsne(X, perplexity=5, iters=100, seed=3).points
    assert np.array_equal(a, b)


def test_dbscan_single_cluster():
    pts = np.random.default_rng(0).uniform(0, 0.1, size=(10, 2))
    assert np.all(embed.dbscan(pts, 1.0, 5) == 0)


def test_dbscan_isolated_point_is_noise():
    pts = np.vstack([np.random.default_rng(0).normal(0, 0.1, size=(20, 2)), [[100.0, 0.0]]])
    labels = embed.dbscan(pts, 1.0, 4)
    assert labels[-1] == -1 and np.all(labels[:-1] == 0)


def test_dbscan_two_blobs():
    rng = np.random.default_rng(2)
    pts = np.vstack([rng.uniform(0, 1, size=(15, 2)), rng.uniform(0, 1, size=(15, 2)) + [11.0, 0.0]])
    labels = embed.dbscan(pts, 1.0, 3)
    assert len(set(labels.tolist()) - {-1}) == 2
    assert same_partition(labels, brute_force_dbscan(pts, 1.0, 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.floats(0.1, 2.0), st.integers(1, 6), st.integers(0, 10**6))
def test_dbscan_matches_oracle(n, eps, min_pts, seed):
    pts = np.random.default_rng(seed).uniform(0, 5, size=(n, 2))
    assert same_partition(embed.dbscan(pts, eps, min_pts), brute_force_dbscan(pts, eps, min_pts))


def test_dbscan_rejects_bad_params():
    with pytest.raises(embed.EmbeddingError):
        embed.dbscan(np.zeros((3, 2)), 0.0, 2)


def test_elbow_eps_positive():
    pts = np.random.default_rng(0).normal(size=(50, 2))
    assert embed.elbow_eps(pts, 5) > 0


def manual_model(points, labels, k):
    points = np.asarray(points, float)
    spectra = np.zeros((len(points), N_CHANNELS))
    spectra[:, 0] = np.arange(len(points)) * 10.0
    centroids = {int(l): spectra[np.asarray(labels) == l].mean(0) for l in set(labels) if l != -1}
    return embed.StateModel(points, labels, spectra, centroids, k=k)


def test_knn_identity():
    m = manual_model([[0, 0], [5, 5], [9, 9]], [0, 1, 2], k=1)
    assert embed.knn_assign(m, m.reference_spectra[1]) == 1


def test_knn_majority_and_tie():
    m = manual_model([[0, 0], [0.1, 0], [0.2, 0], [9, 9]], [2, 2, 5, 7], k=3)
    assert embed.knn_assign(m, m.reference_spectra[2]) == 2
    m = manual_model([[0, 0], [0.1, 0], [9, 9]], [3, 1, 7], k=2)
    assert embed.knn_assign(m, m.reference_spectra[0]) == 1


def test_knn_noise_does_not_vote():
    m = manual_model([[0, 0], [0.1, 0], [0.2, 0], [0.3, 0]], [-1, -1, 4, 4], k=1)
    assert embed.knn_assign(m, m.reference_spectra[0]) == 4


def test_fit_states_full_sample_and_determinism():
    X, labels = blobs(n_per=15)
    X = np.round(X, 3)
    params = embed.StateParams(perplexity=10, iters=300, exaggeration_iters=100)
    m = embed.fit_connection_states(X, len(X), params, seed=1)
    assert np.array_equal(m.reference_spectra, X.astype(np.float32))
    assert m == embed.fit_connection_states(X, len(X), params, seed=1)
    assert embed.StateModel.from_json(m.to_json()) == m
    with pytest.raises(embed.EmbeddingError):
        embed.fit_connection_states(X, len(X) + 1, params)
