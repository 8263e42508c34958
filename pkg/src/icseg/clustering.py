"""Instance extraction: DBSCAN over embeddings concatenated with coordinates.

Two DBSCAN implementations share nothing but the neighborhood definition
(Euclidean, inclusive radius, self counted):

* dbscan: grid hashing with cell size eps over the highest-variance axes;
  candidate points come from adjacent occupied cells, exact distances filter
  them. Expected O(N) on separated data, identical output to the reference.
* dbscan_brute_force: the textbook seed-expansion algorithm over a full
  O(N^2) distance matrix; retained as the oracle.

Both are deterministic given fixed point order: cluster ids follow the scan
order of their first core point, and a border point reachable from several
clusters joins the lowest-id one.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import product

import numpy as np

from .core import EmbeddingMatrix, PointCloud, SceneLabels
from .trainer import EmbeddingHead, forward

_UNCLASSIFIED = -2
_NOISE = -1


@dataclass
class DbscanConfig:
    eps: float = 0.25
    min_pts: int = 8
    min_cluster_size: int = 35
    coord_weight: float = 1.0

    def __post_init__(self) -> None:
        if not (self.eps > 0 and np.isfinite(self.eps)):
            raise ValueError("eps must be positive and finite")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")
        if self.coord_weight < 0:
            raise ValueError("coord_weight must be >= 0")


def build_cluster_features(emb: EmbeddingMatrix, cloud: PointCloud,
                           coord_weight: float) -> np.ndarray:
    """Embedding rows with min-max-normalized, weighted coordinates appended.

    Each coordinate axis is mapped to [0,1] within the scene; a degenerate
    axis (max == min) maps to 0.
    """
    if emb.n_points != cloud.n_points:
        raise ValueError("embeddings and cloud disagree on point count")
    lo = cloud.coords.min(axis=0)
    span = cloud.coords.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    normed = np.where(span > 0, (cloud.coords - lo) / safe, 0.0)
    return np.concatenate([emb.values, coord_weight * normed], axis=1)


def _grid_neighbors(features: np.ndarray, eps: float) -> list[np.ndarray]:
    """Per-point arrays of neighbor indices (distance <= eps, self included).

    Points are hashed into an eps-sized grid over the up-to-3 highest-variance
    axes; true neighbors are confined to adjacent cells of that projection, so
    exact distances are evaluated on those candidates only.
    """
    n, d = features.shape
    k = min(3, d)
    dims = np.argsort(-features.var(axis=0), kind="stable")[:k]
    cells = np.floor((features[:, dims] - features[:, dims].min(axis=0)) / eps).astype(np.int64)

    buckets: dict[tuple[int, ...], list[int]] = {}
    for i, key in enumerate(map(tuple, cells.tolist())):
        buckets.setdefault(key, []).append(i)

    offsets = list(product((-1, 0, 1), repeat=k))
    eps_sq = eps * eps
    neighbors: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * n
    for key, members in buckets.items():
        cand: list[int] = []
        for off in offsets:
            cand.extend(buckets.get(tuple(a + b for a, b in zip(key, off)), ()))
        cand_idx = np.array(cand)
        member_idx = np.array(members)
        deltas = features[member_idx, None, :] - features[cand_idx][None, :, :]
        within = np.einsum("ijk,ijk->ij", deltas, deltas) <= eps_sq
        for row, i in enumerate(members):
            neighbors[i] = np.sort(cand_idx[within[row]])
    return neighbors


def _labels_from_neighbors(neighbors: list[np.ndarray], min_pts: int) -> np.ndarray:
    """Connected components of core points; borders join the lowest-id cluster."""
    n = len(neighbors)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    labels = np.full(n, _NOISE, dtype=np.int64)
    cid = 0
    for start in range(n):
        if not core[start] or labels[start] != _NOISE:
            continue
        labels[start] = cid
        queue = deque([start])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if core[q] and labels[q] == _NOISE:
                    labels[q] = cid
                    queue.append(q)
        cid += 1
    # border points: non-core within eps of a core; lowest cluster id wins
    for i in range(n):
        if core[i] or len(neighbors[i]) == 0:
            continue
        reach = [labels[q] for q in neighbors[i] if core[q]]
        if reach:
            labels[i] = min(reach)
    return labels


def dbscan(features: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Grid-accelerated DBSCAN; returns instance labels (>= 0 or -1 noise)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("features must be a non-empty 2-D matrix")
    return _labels_from_neighbors(_grid_neighbors(features, eps), min_pts)


def dbscan_brute_force(features: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Reference DBSCAN: full distance matrix plus classic seed expansion."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ValueError("features must be a non-empty 2-D matrix")
    n = features.shape[0]
    sq = np.einsum("ij,ij->i", features, features)
    dist_sq = sq[:, None] + sq[None, :] - 2.0 * (features @ features.T)
    within = dist_sq <= eps * eps + 1e-12 * max(1.0, sq.max())
    # exact re-check: the Gram expansion can lose precision near the radius
    neighbor_lists = [np.flatnonzero(within[i]) for i in range(n)]
    for i in range(n):
        deltas = features[neighbor_lists[i]] - features[i]
        ok = np.einsum("ij,ij->i", deltas, deltas) <= eps * eps
        neighbor_lists[i] = neighbor_lists[i][ok]

    labels = np.full(n, _UNCLASSIFIED, dtype=np.int64)
    cid = 0
    for p in range(n):
        if labels[p] != _UNCLASSIFIED:
            continue
        if len(neighbor_lists[p]) < min_pts:
            labels[p] = _NOISE
            continue
        labels[p] = cid
        seeds = deque(neighbor_lists[p])
        while seeds:
            q = seeds.popleft()
            if labels[q] == _NOISE:
                labels[q] = cid  # border point
            if labels[q] != _UNCLASSIFIED:
                continue
            labels[q] = cid
            if len(neighbor_lists[q]) >= min_pts:
                seeds.extend(neighbor_lists[q])
        cid += 1
    return labels


def suppress_small_clusters(labels: np.ndarray, min_cluster_size: int) -> np.ndarray:
    """Relabel clusters smaller than min_cluster_size to -1 and compact ids."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full_like(labels, _NOISE)
    kept = labels >= 0
    if not kept.any():
        return out
    ids, inverse = np.unique(labels[kept], return_inverse=True)
    sizes = np.bincount(inverse)
    keep_mask = sizes >= min_cluster_size
    remap = np.full(ids.size, _NOISE, dtype=np.int64)
    remap[keep_mask] = np.arange(keep_mask.sum())
    out[kept] = remap[inverse]
    return out


def segment(head: EmbeddingHead, cloud: PointCloud, per_category: bool,
            cfg: DbscanConfig) -> SceneLabels:
    """Predict instance labels for a scene with a trained head.

    Embeddings are projected onto the unit sphere before the coordinate
    concatenation (the loss constrains directions only, so the raw norm is
    meaningless for the Euclidean clustering metric). With per_category set,
    DBSCAN runs independently within each argmax semantic class and the
    resulting instance ids are globally unique.
    """
    emb, logits = forward(head, cloud)
    sem_pred = np.argmax(logits, axis=1).astype(np.int64)
    norms = np.linalg.norm(emb.values, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding row; cannot place on the unit sphere")
    feats = build_cluster_features(EmbeddingMatrix(emb.values / norms), cloud,
                                   cfg.coord_weight)

    instance = np.full(cloud.n_points, _NOISE, dtype=np.int64)
    if per_category:
        next_id = 0
        for cat in np.unique(sem_pred):
            idx = np.flatnonzero(sem_pred == cat)
            local = dbscan(feats[idx], cfg.eps, cfg.min_pts)
            clustered = local >= 0
            instance[idx[clustered]] = local[clustered] + next_id
            if clustered.any():
                next_id += int(local.max()) + 1
    else:
        instance = dbscan(feats, cfg.eps, cfg.min_pts)

    instance = suppress_small_clusters(instance, cfg.min_cluster_size)
    return SceneLabels(semantic=sem_pred, instance=instance)
