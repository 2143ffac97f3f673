"""Clustering of fitted parameter curves.

Nodes are compared through the L2 distance between their sender (or
receiver) curves, which is unaffected by the identifiability pinning since
a common shift of all curves cancels.  The distance matrix feeds a
classical MDS embedding and a K-medoids clustering.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.integrate import trapezoid

from .exceptions import ParameterError
from .network import ParamTrajectory

__all__ = [
    "TrajectoryDistance",
    "trajectory_distance",
    "mds_embed",
    "cluster",
    "kmedoids",
    "cluster_ratio",
    "SelectKResult",
    "select_k",
]


@dataclass(frozen=True, eq=False)
class TrajectoryDistance:
    kind: str
    D: np.ndarray
    grid: np.ndarray

    @property
    def n(self) -> int:
        return self.D.shape[0]


def _as_distance(D) -> np.ndarray:
    return D.D if isinstance(D, TrajectoryDistance) else np.asarray(D, dtype=float)


def trajectory_distance(traj: ParamTrajectory, kind: str = "alpha") -> TrajectoryDistance:
    """Pairwise ``sqrt(int (x_i(t) - x_j(t))^2 dt)`` by the trapezoid rule on the grid.

    ``kind="beta"`` includes the pinned (identically zero) last receiver.
    Grid rows containing NaN are dropped before integrating.
    """
    if kind not in ("alpha", "beta"):
        raise ParameterError(f"kind must be 'alpha' or 'beta', got {kind!r}")
    X = traj.alpha if kind == "alpha" else traj.beta
    keep = np.isfinite(X).all(axis=1)
    X, grid = X[keep], traj.grid[keep]
    if grid.shape[0] < 2:
        raise ParameterError("need at least two finite grid points")
    n = X.shape[1]
    D2 = np.zeros((n, n))
    for i in range(n):
        D2[i] = trapezoid((X - X[:, i : i + 1]) ** 2, grid, axis=0)
    D2 = 0.5 * (D2 + D2.T)
    np.fill_diagonal(D2, 0.0)
    return TrajectoryDistance(kind, np.sqrt(np.clip(D2, 0.0, None)), grid)


def mds_embed(D, dim: int = 1) -> np.ndarray:
    """Classical MDS coordinates, shape ``(n, dim)``.

    Eigenvectors are signed so that their first non-zero entry is positive.
    """
    D = _as_distance(D)
    n = D.shape[0]
    if not 1 <= dim <= n:
        raise ParameterError(f"dim must be in [1, {n}], got {dim}")
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D ** 2) @ J
    vals, vecs = np.linalg.eigh(0.5 * (B + B.T))
    order = np.argsort(vals)[::-1][:dim]
    vals, vecs = vals[order], vecs[:, order]
    for k in range(dim):
        nz = np.flatnonzero(np.abs(vecs[:, k]) > 1e-12)
        if nz.size and vecs[nz[0], k] < 0:
            vecs[:, k] *= -1
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def kmedoids(D, K: int, max_swaps: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """PAM-style K-medoids on a distance matrix.

    Seeding is deterministic: the most central point first, then repeatedly
    the point farthest from its nearest medoid.  The swap phase applies the
    best improving (medoid, non-medoid) exchange until none remains.

    Returns
    -------
    labels : ndarray of int, values ``0..K-1``
    medoids : ndarray of int
    """
    D = _as_distance(D)
    n = D.shape[0]
    if not 1 <= K <= n:
        raise ParameterError(f"K must be in [1, {n}], got {K}")
    medoids = [int(np.argmin(D.sum(axis=1)))]
    while len(medoids) < K:
        near = D[:, medoids].min(axis=1)
        near[medoids] = -1.0
        medoids.append(int(np.argmax(near)))
    medoids = np.array(medoids)

    def cost(meds):
        return D[:, meds].min(axis=1).sum()

    best = cost(medoids)
    for _ in range(max_swaps):
        improvement, swap = 0.0, None
        others = np.setdiff1d(np.arange(n), medoids)
        for k in range(K):
            for o in others:
                trial = medoids.copy()
                trial[k] = o
                c = cost(trial)
                if best - c > improvement + 1e-12 * max(1.0, best):
                    improvement, swap = best - c, trial
        if swap is None:
            break
        medoids, best = swap, best - improvement
    labels = np.argmin(D[:, medoids], axis=1)
    return labels, medoids


def cluster(D, K: int, method: str = "kmedoids", dim: int | None = None, seed: int = 0) -> np.ndarray:
    """Cluster labels ``1..K``.

    ``method="kmedoids"`` works on ``D`` directly.  ``method="kmeans-mds"``
    runs k-means on a ``dim``-dimensional MDS embedding (default ``K``
    dimensions, capped at ``n``).
    """
    D = _as_distance(D)
    if method == "kmedoids":
        labels, _ = kmedoids(D, K)
    elif method == "kmeans-mds":
        X = mds_embed(D, min(dim or K, D.shape[0]))
        _, labels = kmeans2(X, K, minit="++", seed=seed)
    else:
        raise ParameterError(f"unknown method {method!r}")
    return labels + 1


def cluster_ratio(D, labels) -> float:
    """Mean between-cluster distance over mean within-cluster distance (pairs i < j)."""
    D = _as_distance(D)
    labels = np.asarray(labels)
    iu = np.triu_indices(D.shape[0], k=1)
    same = labels[iu[0]] == labels[iu[1]]
    d = D[iu]
    if same.all() or not same.any():
        return np.nan
    within = d[same].mean()
    return float(d[~same].mean() / within) if within > 0 else np.inf


@dataclass
class SelectKResult:
    ks: np.ndarray
    ratios: np.ndarray
    labels: dict
    suggested: int
    degenerate: bool = False


def select_k(D, k_max: int, threshold: float = 0.05, method: str = "kmedoids") -> SelectKResult:
    """Ratio curve for ``K = 2..k_max`` and a suggested ``K``.

    The suggestion is the smallest ``K`` after which moving to ``K + 1``
    raises the ratio by less than ``threshold`` (relative); ``k_max`` if the
    ratio keeps improving.  An all-zero ``D`` is flagged degenerate and
    suggests 1.
    """
    D = _as_distance(D)
    n = D.shape[0]
    if not 2 <= k_max <= n - 1:
        raise ParameterError(f"k_max must be in [2, {n - 1}], got {k_max}")
    ks = np.arange(2, k_max + 1)
    if not np.any(D > 0):
        return SelectKResult(ks, np.full(ks.size, np.nan), {}, 1, degenerate=True)
    labels = {int(K): cluster(D, int(K), method) for K in ks}
    ratios = np.array([cluster_ratio(D, labels[int(K)]) for K in ks])
    suggested = int(k_max)
    for idx in range(ks.size - 1):
        r, r_next = ratios[idx], ratios[idx + 1]
        if np.isinf(r) or (np.isfinite(r) and r_next <= r * (1.0 + threshold)):
            suggested = int(ks[idx])
            break
    return SelectKResult(ks, ratios, labels, suggested)
