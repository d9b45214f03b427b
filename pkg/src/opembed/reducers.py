"""Non-neural featurization baselines: PCA via power iteration with
deflation, and greedy correlation-based feature agglomeration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PcaModel:
    mean: np.ndarray                 # (D,)
    components: np.ndarray           # (K, D), rows orthonormal
    explained_variance: np.ndarray   # (K,), nonincreasing


def fit_pca(
    X: np.ndarray,
    k: int,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    seed: int = 0,
) -> PcaModel:
    """Leading k principal directions of the sample covariance.

    Power iteration with deflation; every iterate is re-orthogonalized
    against the components already found. Sign convention: the
    largest-magnitude coordinate of each component is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a matrix with at least 2 rows")
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)

    components = np.zeros((k, d))
    variances = np.zeros(k)
    for j in range(k):
        rng = np.random.default_rng([seed, 23, j])
        v = rng.normal(0.0, 1.0, d)
        v -= components[:j].T @ (components[:j] @ v)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = cov @ v
            w -= components[:j].T @ (components[:j] @ w)
            norm = np.linalg.norm(w)
            if norm < 1e-18:
                # deflated matrix is (numerically) zero on this subspace:
                # current v is a valid direction with eigenvalue ~0
                break
            w /= norm
            if np.linalg.norm(w - v) < tol:
                v = w
                break
            v = w
        lam = float(v @ cov @ v)
        variances[j] = max(lam, 0.0)
        cov = cov - lam * np.outer(v, v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components[j] = v
    return PcaModel(mean, components, variances)


def transform_pca(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Coordinates of centered x on the principal directions."""
    x = np.asarray(x, dtype=np.float64)
    return (x - model.mean) @ model.components.T


def reconstruct_pca(model: PcaModel, z: np.ndarray) -> np.ndarray:
    """Back-projection from component coordinates to input space."""
    z = np.asarray(z, dtype=np.float64)
    return z @ model.components + model.mean


@dataclass
class FaModel:
    clusters: tuple[tuple[int, ...], ...]  # disjoint, sorted, cover [0, D)
    dim: int

    @property
    def k(self) -> int:
        return len(self.clusters)


def _safe_corr(a: np.ndarray, B: np.ndarray) -> np.ndarray:
    """|Pearson| of column a against each column of B; zero-variance -> 0."""
    a = a - a.mean()
    B = B - B.mean(axis=0)
    sa = np.sqrt((a * a).sum())
    sb = np.sqrt((B * B).sum(axis=0))
    num = a @ B
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where((sa > 0) & (sb > 0), num / (sa * sb), 0.0)
    return np.abs(corr)


def fit_fa(X: np.ndarray, k: int) -> FaModel:
    """Greedy agglomeration of the input slots down to k merged features.

    Repeatedly merges the two clusters whose representative columns (means
    of member slots) have the highest |Pearson correlation|; ties resolve
    to the lexicographically lowest cluster-index pair.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a matrix with at least 2 rows")
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")

    clusters: list[list[int]] = [[j] for j in range(d)]
    reps = X.copy()  # column j is cluster j's representative

    # pairwise |corr|, upper triangle only; lower+diagonal poisoned so a
    # row-major argmax lands on the lowest (i, j) among ties
    m = d
    C = np.full((m, m), -1.0)
    for i in range(m):
        if i + 1 < m:
            C[i, i + 1 :] = _safe_corr(reps[:, i], reps[:, i + 1 :])

    while len(clusters) > k:
        flat = int(np.argmax(C))
        i, j = divmod(flat, C.shape[1])
        clusters[i] = sorted(clusters[i] + clusters[j])
        del clusters[j]
        merged_rep = X[:, clusters[i]].mean(axis=1)
        reps = np.delete(reps, j, axis=1)
        reps[:, i] = merged_rep
        C = np.delete(np.delete(C, j, axis=0), j, axis=1)
        if i > 0:
            C[:i, i] = _safe_corr(merged_rep, reps[:, :i])
        if i + 1 < reps.shape[1]:
            C[i, i + 1 :] = _safe_corr(merged_rep, reps[:, i + 1 :])
    return FaModel(tuple(tuple(c) for c in clusters), d)


def transform_fa(model: FaModel, x: np.ndarray) -> np.ndarray:
    """Reduced features: mean of each cluster's member slots."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    rows = np.atleast_2d(x)
    if rows.shape[1] != model.dim:
        raise ValueError(f"input has {rows.shape[1]} slots, model wants {model.dim}")
    out = np.column_stack([rows[:, c].mean(axis=1) for c in model.clusters])
    return out[0] if single else out
