"""Connection-state discovery: t-SNE embedding, DBSCAN clustering, KNN assignment."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from .core import PLCError

NOISE = -1


class EmbeddingError(PLCError, ValueError):
    pass


# ----------------------------------------------------------------------- PCA


def pca(X, k: int):
    """Principal components of ``X`` (rows are samples).

    Returns ``(components, explained_variance, projected)`` with components as
    orthonormal rows and variances in non-increasing order.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if k < 1 or k > min(n, d):
        raise EmbeddingError(f"k={k} must lie in [1, min(n, d)={min(n, d)}]")
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    components = vt[:k]
    explained = s[:k] ** 2 / max(n - 1, 1)
    return components, explained, Xc @ components.T


def components_for_variance(X, fraction: float = 0.95) -> int:
    """Smallest number of principal components explaining ``fraction`` of the variance."""
    X = np.asarray(X, dtype=np.float64)
    s = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    var = s**2
    if var.sum() == 0:
        return 0
    return int(np.searchsorted(np.cumsum(var) / var.sum(), fraction - 1e-12) + 1)


# --------------------------------------------------------------------- t-SNE


@dataclass
class EmbeddingResult:
    points: np.ndarray
    kl_trace: list
    params: dict
    kl_iterations: list = field(default_factory=list)


def squared_distances(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def conditional_probabilities(D2: np.ndarray, perplexity: float, tol: float = 1e-4, max_iter: int = 200):
    """Row-wise Gaussian affinities matching the target perplexity.

    Every row is solved by bisection on the precision ``beta`` until the
    natural-log entropy is within ``tol`` of ``log(perplexity)``. Returns the
    conditional matrix (rows sum to one) and the precisions.
    """
    n = D2.shape[0]
    target = np.log(perplexity)
    off = ~np.eye(n, dtype=bool)
    D = np.where(off, D2, np.inf)
    # shift rows by their nearest distance; the conditionals are invariant to it
    D = D - D.min(axis=1, keepdims=True)
    D[~off] = np.inf
    scale = np.median(np.where(np.isfinite(D), D, np.nan), axis=1)
    beta = 1.0 / np.where(scale > 0, scale, 1.0)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    P = np.zeros_like(D)
    for _ in range(max_iter):
        P = np.exp(-D * beta[:, None])
        sumP = P.sum(axis=1)
        H = np.log(sumP) + beta * np.nansum(np.where(off, D, 0.0) * P, axis=1) / sumP
        diff = H - target
        if np.all(np.abs(diff) < tol):
            break
        up = diff > 0  # entropy too high: sharpen
        lo = np.where(up, beta, lo)
        hi = np.where(up, hi, beta)
        beta = np.where(
            np.abs(diff) < tol,
            beta,
            np.where(np.isinf(hi), beta * 2.0, (lo + hi) / 2.0),
        )
    P = P / P.sum(axis=1, keepdims=True)
    return P, beta


def joint_probabilities(X, perplexity: float) -> np.ndarray:
    cond, _ = conditional_probabilities(squared_distances(X), perplexity)
    n = cond.shape[0]
    return (cond + cond.T) / (2.0 * n)


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-300)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne(
    X,
    perplexity: float = 30.0,
    iters: int = 1000,
    seed: int = 0,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    learning_rate: Optional[float] = None,
    checkpoint_every: int = 50,
) -> EmbeddingResult:
    """Exact t-SNE into two dimensions.

    Gradient descent with momentum (0.5, then 0.8) and per-coordinate adaptive
    gains; affinities are exaggerated during the first ``exaggeration_iters``
    iterations. The KL divergence against the unexaggerated affinities is
    recorded every ``checkpoint_every`` iterations and at the last one.
    ``learning_rate=None`` uses ``max(n / exaggeration / 4, 50)``; a fixed 200
    overshoots on small samples.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 5:
        raise EmbeddingError("t-SNE needs at least 5 points")
    if not 1.0 < perplexity < (n - 1) / 3.0:
        raise EmbeddingError(f"perplexity {perplexity} infeasible for n={n}; need 1 < perplexity < {(n - 1) / 3:.2f}")
    if learning_rate is None:
        learning_rate = max(n / exaggeration / 4.0, 50.0)
    P = joint_probabilities(X, perplexity)
    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace, trace_iters = [], []
    for it in range(1, iters + 1):
        exag = exaggeration if it <= exaggeration_iters else 1.0
        momentum = 0.5 if it <= exaggeration_iters else 0.8
        num = 1.0 / (1.0 + squared_distances(Y))
        np.fill_diagonal(num, 0.0)
        Q = num / num.sum()
        W = (exag * P - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if it % checkpoint_every == 0 or it == iters:
            trace.append(kl_divergence(P, Y))
            trace_iters.append(it)
    params = {
        "perplexity": perplexity,
        "iters": iters,
        "seed": seed,
        "exaggeration": exaggeration,
        "exaggeration_iters": exaggeration_iters,
        "learning_rate": learning_rate,
    }
    return EmbeddingResult(Y, trace, params, trace_iters)


# -------------------------------------------------------------------- DBSCAN


def region_queries(points: np.ndarray, eps: float) -> list:
    tree = cKDTree(points)
    return [np.asarray(sorted(nb), dtype=np.int64) for nb in tree.query_ball_point(points, eps)]


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering; ``-1`` marks noise.

    Points are visited in index order, so clusters are numbered by their
    lowest-index core point and a border point reachable from several clusters
    joins the one numbered first. A point's own position counts towards
    ``min_pts``.
    """
    points = np.asarray(points, dtype=np.float64)
    if eps <= 0 or min_pts < 1:
        raise EmbeddingError("eps must be positive and min_pts at least 1")
    n = points.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    neighbors = region_queries(points, eps)
    core = np.array([nb.size >= min_pts for nb in neighbors])
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


def core_mask(points, eps: float, min_pts: int) -> np.ndarray:
    return np.array([nb.size >= min_pts for nb in region_queries(np.asarray(points, float), eps)])


def k_distance(points, k: int) -> np.ndarray:
    """Distance of every point to its k-th nearest neighbour (itself excluded), ascending."""
    points = np.asarray(points, dtype=np.float64)
    k = min(k, len(points) - 1)
    d, _ = cKDTree(points).query(points, k=k + 1)
    return np.sort(d[:, -1])


def elbow_eps(points, min_pts: int, scale: float = 1.0) -> float:
    """Pick ``eps`` at the knee of the sorted k-distance curve.

    The knee is the point of maximum distance below the chord joining the
    curve's end points (both axes normalized to [0, 1]).
    """
    kd = k_distance(points, max(min_pts - 1, 1))
    if kd[-1] <= kd[0]:
        return float(kd[-1] * scale) if kd[-1] > 0 else 1e-9
    x = np.linspace(0.0, 1.0, kd.size)
    y = (kd - kd[0]) / (kd[-1] - kd[0])
    knee = int(np.argmax(x - y))
    return float(max(kd[knee], 1e-9) * scale)


# --------------------------------------------------------------- state model


@dataclass
class StateParams:
    perplexity: float = 30.0
    iters: int = 1000
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: Optional[float] = None
    eps: Optional[float] = None
    eps_scale: float = 3.0
    min_pts: int = 5
    k: int = 5


@dataclass(eq=False)
class StateModel:
    reference_points: np.ndarray
    reference_labels: np.ndarray
    reference_spectra: np.ndarray
    centroids: dict
    k: int = 5
    params: dict = field(default_factory=dict)
    seed: int = 0
    kl_trace: list = field(default_factory=list)

    def __post_init__(self):
        self.reference_points = np.asarray(self.reference_points, dtype=np.float64).reshape(-1, 2)
        self.reference_labels = np.asarray(self.reference_labels, dtype=np.int64)
        self.reference_spectra = np.asarray(self.reference_spectra, dtype=np.float32)
        self.centroids = {int(k): np.asarray(v, dtype=np.float64) for k, v in self.centroids.items()}

    @property
    def labels(self) -> list:
        return sorted(self.centroids)

    def __len__(self) -> int:
        return len(self.reference_labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StateModel):
            return NotImplemented
        return (
            np.array_equal(self.reference_points, other.reference_points)
            and np.array_equal(self.reference_labels, other.reference_labels)
            and np.array_equal(self.reference_spectra, other.reference_spectra)
            and self.labels == other.labels
            and all(np.array_equal(self.centroids[k], other.centroids[k]) for k in self.labels)
            and self.k == other.k
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "seed": self.seed,
                "params": self.params,
                "reference_points": self.reference_points.tolist(),
                "reference_labels": self.reference_labels.tolist(),
                "reference_spectra": np.round(self.reference_spectra.astype(np.float64), 3).tolist(),
                "centroids": {str(k): v.tolist() for k, v in sorted(self.centroids.items())},
                "kl_trace": self.kl_trace,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "StateModel":
        d = json.loads(text)
        return cls(
            reference_points=np.array(d["reference_points"]),
            reference_labels=np.array(d["reference_labels"]),
            reference_spectra=np.array(d["reference_spectra"]),
            centroids={int(k): np.array(v) for k, v in d["centroids"].items()},
            k=d["k"],
            params=d.get("params", {}),
            seed=d.get("seed", 0),
            kl_trace=d.get("kl_trace", []),
        )


def _vote(labels: np.ndarray) -> int:
    values, counts = np.unique(labels, return_counts=True)
    return int(values[np.argmax(counts)])  # np.unique sorts, so ties go to the smallest id


def assign_states(model: StateModel, spectra) -> np.ndarray:
    """Vectorized :func:`knn_assign` over the rows of ``spectra``."""
    if len(model) == 0:
        raise EmbeddingError("state model has no reference points")
    Q = np.asarray(spectra, dtype=np.float64)
    if Q.ndim == 1:
        Q = Q[None, :]
    if Q.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    R = model.reference_spectra.astype(np.float64)
    voters = np.flatnonzero(model.reference_labels != NOISE)
    if voters.size == 0:
        return np.full(Q.shape[0], NOISE, dtype=np.int64)
    k = min(model.k, voters.size)
    r2 = np.einsum("ij,ij->i", R, R)
    out = np.empty(Q.shape[0], dtype=np.int64)
    # query in chunks to bound memory
    for start in range(0, Q.shape[0], 2048):
        q = Q[start : start + 2048]
        d = r2[None, :] - 2.0 * (q @ R.T)
        nearest = np.argmin(d, axis=1)
        anchor = model.reference_points[nearest]
        d2 = ((anchor[:, None, :] - model.reference_points[None, voters, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        for i, row in enumerate(order):
            out[start + i] = _vote(model.reference_labels[voters[row]])
    return out


def knn_assign(model: StateModel, query_spectrum) -> int:
    """Connection state of one spectrum.

    The spectrum takes the 2-d coordinate of its nearest reference spectrum
    (Euclidean, dB space) and the state is the majority label among the ``k``
    nearest clustered references in the embedding. Noise references do not
    vote; ties go to the smallest label.
    """
    return int(assign_states(model, np.asarray(query_spectrum)[None, :])[0])


def _collect_spectra(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return dataset
    if hasattr(dataset, "series"):
        dataset = dataset.series
    if isinstance(dataset, Mapping):
        return np.concatenate([dataset[k].spectra for k in sorted(dataset)])
    return np.concatenate([s.spectra for s in dataset])


def fit_connection_states(
    dataset, sample_size: int, params: Optional[StateParams] = None, seed: int = 0
) -> StateModel:
    """Embed a uniform sample of spectra with t-SNE, cluster with DBSCAN.

    ``dataset`` may be a simulated dataset, a mapping of series, a list of
    series or a plain ``(n, 917)`` array.
    """
    params = params or StateParams()
    spectra = _collect_spectra(dataset)
    n = spectra.shape[0]
    if n == 0:
        raise EmbeddingError("dataset has no spectra")
    if sample_size > n:
        raise EmbeddingError(f"sample_size {sample_size} exceeds the {n} available spectra")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=sample_size, replace=False))
    sample = spectra[idx]
    emb = tsne(
        sample,
        perplexity=params.perplexity,
        iters=params.iters,
        seed=seed,
        exaggeration=params.exaggeration,
        exaggeration_iters=params.exaggeration_iters,
        learning_rate=params.learning_rate,
    )
    eps = params.eps if params.eps is not None else elbow_eps(emb.points, params.min_pts, params.eps_scale)
    labels = dbscan(emb.points, eps, params.min_pts)
    centroids = {
        int(c): sample[labels == c].astype(np.float64).mean(axis=0) for c in np.unique(labels) if c != NOISE
    }
    return StateModel(
        reference_points=emb.points,
        reference_labels=labels,
        reference_spectra=sample,
        centroids=centroids,
        k=params.k,
        params={**asdict(params), "eps_used": eps, "sample_size": sample_size},
        seed=seed,
        kl_trace=emb.kl_trace,
    )
