"""Embedding losses with analytic gradients.

Two instance-embedding losses over per-point embeddings grouped by instance:

* cosine_loss: hinges on cosine similarity, linear (absolute) hinge terms.
  Pulls each point's similarity to its cluster centroid above delta_v and
  pushes inter-centroid similarity below delta_d. Scale-invariant: only
  embedding directions matter.
* euclidean_discriminative_loss: the classic Euclidean baseline with squared
  hinges and a centroid-norm regularizer.

Both add a class-weighted softmax cross entropy on a parallel logits matrix
and return gradients w.r.t. embeddings and logits. Centroids are raw means
of the (unnormalized) member embeddings, and gradients flow through the
centroid's dependence on the embeddings (full chain rule). The hinge
subgradient at exactly zero margin is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EmbeddingMatrix, LossConfig, SceneLabels


@dataclass(eq=False)
class ClusterStats:
    n_clusters: int
    centroids: np.ndarray  # (C, d_e), raw-mean embeddings
    sizes: np.ndarray      # (C,), points per cluster


@dataclass(eq=False)
class LossReport:
    l_sem: float
    l_var: float
    l_dist: float
    l_reg: float
    total: float
    grad_embeddings: np.ndarray
    grad_logits: np.ndarray


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; symmetric and scale-invariant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _compact_members(labels: SceneLabels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices of labeled points, their compacted cluster ids, cluster sizes."""
    member = np.flatnonzero(labels.instance >= 0)
    if member.size == 0:
        raise ValueError("no non-noise instance labels; cluster terms undefined")
    ids, cids = np.unique(labels.instance[member], return_inverse=True)
    sizes = np.bincount(cids, minlength=ids.size)
    return member, cids, sizes


def _row_norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _cluster_sums(values: np.ndarray, cids: np.ndarray, c: int) -> np.ndarray:
    """Per-cluster row sums via a one-hot matmul (much faster than add.at)."""
    onehot = np.zeros((c, values.shape[0]))
    onehot[cids, np.arange(values.shape[0])] = 1.0
    return onehot @ values


def cluster_stats(emb: EmbeddingMatrix, labels: SceneLabels) -> ClusterStats:
    """Per-cluster raw-mean centroids and sizes, ordered by compacted instance id."""
    x = emb.values
    if labels.n_points != emb.n_points:
        raise ValueError("labels and embeddings disagree on point count")
    member, cids, sizes = _compact_members(labels)
    c = sizes.size
    centroids = _cluster_sums(x[member], cids, c) / sizes[:, None]
    return ClusterStats(n_clusters=c, centroids=centroids, sizes=sizes)


def default_class_weights(semantic: np.ndarray, n_categories: int) -> np.ndarray:
    """Inverse point-frequency weights, normalized to mean 1 over present categories."""
    counts = np.bincount(semantic, minlength=n_categories).astype(np.float64)
    present = counts > 0
    w = np.ones(n_categories)
    raw = 1.0 / counts[present]
    w[present] = raw * (present.sum() / raw.sum())
    return w


def weighted_cross_entropy(
    logits: np.ndarray, semantic: np.ndarray, class_weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean over points of w[y_i] * (-log softmax(logits_i)[y_i]) and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    semantic = np.asarray(semantic)
    n, k = logits.shape
    if semantic.shape != (n,):
        raise ValueError("semantic labels must match logits row count")
    if np.any(semantic < 0) or np.any(semantic >= k):
        raise ValueError("semantic label out of range for logits width")
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if class_weights.shape != (k,):
        raise ValueError("class_weights must have one entry per category")
    if np.any(class_weights <= 0):
        raise ValueError("class weights must be positive")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p_true = shifted[np.arange(n), semantic] - log_z
    w_i = class_weights[semantic]
    loss = float(np.mean(w_i * (-log_p_true)))

    grad = np.exp(shifted - log_z[:, None])
    grad[np.arange(n), semantic] -= 1.0
    grad *= (w_i / n)[:, None]
    return loss, grad


def _check_rows_nonzero(norms: np.ndarray) -> None:
    if np.any(norms == 0.0):
        raise ValueError("zero-norm embedding row; cosine similarity undefined")


def _sem_term(
    logits: np.ndarray, labels: SceneLabels, cfg: LossConfig, n_points: int
) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] != n_points:
        raise ValueError("logits must be (n_points, n_categories)")
    weights = cfg.class_weights
    if weights is None:
        weights = default_class_weights(labels.semantic, logits.shape[1])
    return weighted_cross_entropy(logits, labels.semantic, weights)


def cosine_loss(
    emb: EmbeddingMatrix,
    logits: np.ndarray,
    labels: SceneLabels,
    cfg: LossConfig,
) -> LossReport:
    """Cosine-margin instance loss plus weighted cross entropy.

    l_var  = (1/C) sum_c (1/N_c) sum_{i in c} [delta_v - s(mu_c, x_i)]_+
    l_dist = (1/(C(C-1))) sum_{cA != cB} [s(mu_cA, mu_cB) - delta_d]_+
             (ordered pairs; 0 by convention when C < 2)
    total  = l_sem + alpha * l_var + beta * l_dist
    """
    if not (0.0 < cfg.delta_v <= 1.0):
        raise ValueError("cosine loss needs delta_v in (0, 1]")
    if not (-1.0 <= cfg.delta_d < 1.0):
        raise ValueError("cosine loss needs delta_d in [-1, 1)")
    if cfg.delta_d >= cfg.delta_v:
        raise ValueError("cosine loss requires delta_d < delta_v")
    x = emb.values
    n, d = x.shape
    if labels.n_points != n:
        raise ValueError("labels and embeddings disagree on point count")

    l_sem, grad_logits = _sem_term(logits, labels, cfg, n)

    xn = _row_norms(x)
    _check_rows_nonzero(xn)
    member, cids, sizes = _compact_members(labels)
    c = sizes.size
    full = member.size == n  # no noise points: skip the gather/scatter
    xs = x if full else x[member]
    xn_m = xn if full else xn[member]

    centroids = _cluster_sums(xs, cids, c) / sizes[:, None]
    mn = _row_norms(centroids)
    if np.any(mn == 0.0):
        raise ValueError("zero-norm cluster centroid; cosine similarity undefined")

    inv_xn = 1.0 / xn_m
    unit_x = xs * inv_xn[:, None]
    unit_mu = centroids / mn[:, None]
    mu_pp = unit_mu[cids]  # per-point centroid direction

    # l_var and its gradient (direct + through the centroid)
    sims = np.einsum("ij,ij->i", unit_x, mu_pp)
    margins_v = cfg.delta_v - sims
    active_v = margins_v > 0.0
    per_cluster = np.bincount(cids, weights=np.where(active_v, margins_v, 0.0), minlength=c)
    l_var = float(np.mean(per_cluster / sizes))

    # coefficient of l_var w.r.t. each similarity s_i; the buffer arithmetic
    # below is in place because these (N, d_e) temporaries dominate runtime
    coef = np.where(active_v, -1.0 / (c * sizes[cids]), 0.0)
    neg_sims = -sims
    d_direct = unit_x * neg_sims[:, None]
    d_direct += mu_pp
    d_direct *= (coef * inv_xn)[:, None]
    mu_pp *= neg_sims[:, None]  # reuse as the centroid-path term d_mu
    mu_pp += unit_x
    mu_pp *= (coef / mn[cids])[:, None]
    g_mu = _cluster_sums(mu_pp, cids, c)
    g_mu /= sizes[:, None]
    d_direct += g_mu[cids]  # d_direct now holds grad of l_var w.r.t. xs

    # l_dist over ordered centroid pairs
    if c >= 2:
        s_mu = unit_mu @ unit_mu.T
        margins_d = s_mu - cfg.delta_d
        np.fill_diagonal(margins_d, 0.0)
        active_d = margins_d > 0.0
        np.fill_diagonal(active_d, False)
        norm_pairs = c * (c - 1)
        l_dist = float(margins_d[active_d].sum() / norm_pairs)
        w = np.where(active_d, 2.0 / norm_pairs, 0.0)
        g_mu_dist = (w @ unit_mu - (w * s_mu).sum(axis=1)[:, None] * unit_mu) / mn[:, None]
        g_mu_dist /= sizes[:, None]
        d_direct *= cfg.alpha
        d_direct += cfg.beta * g_mu_dist[cids]
    else:
        l_dist = 0.0
        d_direct *= cfg.alpha

    if full:
        grad = d_direct
    else:
        grad = np.zeros_like(x)
        grad[member] = d_direct
    total = l_sem + cfg.alpha * l_var + cfg.beta * l_dist
    return LossReport(
        l_sem=l_sem, l_var=l_var, l_dist=l_dist, l_reg=0.0, total=total,
        grad_embeddings=grad, grad_logits=grad_logits,
    )


def euclidean_discriminative_loss(
    emb: EmbeddingMatrix,
    logits: np.ndarray,
    labels: SceneLabels,
    cfg: LossConfig,
) -> LossReport:
    """Baseline discriminative loss with squared hinges in Euclidean space.

    l_var  = (1/C) sum_c (1/N_c) sum_i [||mu_c - x_i|| - delta_v]_+^2
    l_dist = (1/(C(C-1))) sum_{cA != cB} [2 delta_d - ||mu_cA - mu_cB||]_+^2
    l_reg  = (1/C) sum_c ||mu_c||
    total  = l_sem + alpha l_var + beta l_dist + gamma l_reg
    """
    if cfg.delta_v < 0 or cfg.delta_d < 0:
        raise ValueError("euclidean loss needs non-negative distance margins")
    x = emb.values
    n, d = x.shape
    if labels.n_points != n:
        raise ValueError("labels and embeddings disagree on point count")

    l_sem, grad_logits = _sem_term(logits, labels, cfg, n)

    _check_rows_nonzero(_row_norms(x))
    member, cids, sizes = _compact_members(labels)
    c = sizes.size

    centroids = _cluster_sums(x[member], cids, c) / sizes[:, None]

    # l_var: squared hinge on point-to-centroid distance
    diffs = x[member] - centroids[cids]
    dists = _row_norms(diffs)
    margins_v = dists - cfg.delta_v
    active_v = (margins_v > 0.0) & (dists > 0.0)
    hinge_v = np.where(active_v, margins_v, 0.0)
    per_cluster = np.bincount(cids, weights=hinge_v**2, minlength=c)
    l_var = float(np.mean(per_cluster / sizes))

    safe_d = np.where(dists > 0.0, dists, 1.0)
    coef = np.where(active_v, 2.0 * hinge_v / (c * sizes[cids] * safe_d), 0.0)
    d_direct = coef[:, None] * diffs
    g_mu = -_cluster_sums(d_direct, cids, c)
    grad_var = np.zeros_like(x)
    grad_var[member] = d_direct + g_mu[cids] / sizes[cids, None]

    # l_dist: squared hinge pushing centroids at least 2*delta_d apart
    grad_dist = np.zeros_like(x)
    if c >= 2:
        pair_diff = centroids[:, None, :] - centroids[None, :, :]
        pair_dist = np.linalg.norm(pair_diff, axis=2)
        g = 2.0 * cfg.delta_d - pair_dist
        np.fill_diagonal(g, 0.0)
        active_d = g > 0.0
        np.fill_diagonal(active_d, False)
        norm_pairs = c * (c - 1)
        l_dist = float((g[active_d] ** 2).sum() / norm_pairs)
        safe_pd = np.where(pair_dist > 0.0, pair_dist, 1.0)
        # both ordered pairs contribute; subgradient 0 at coincident centroids
        w = np.where(active_d & (pair_dist > 0.0), -4.0 * g / (norm_pairs * safe_pd), 0.0)
        g_mu_dist = (w[:, :, None] * pair_diff).sum(axis=1)
        grad_dist[member] = g_mu_dist[cids] / sizes[cids, None]
    else:
        l_dist = 0.0

    # l_reg: mean centroid norm
    mn = _row_norms(centroids)
    l_reg = float(np.mean(mn))
    safe_mn = np.where(mn > 0.0, mn, 1.0)
    g_mu_reg = np.where(mn[:, None] > 0.0, centroids / (c * safe_mn[:, None]), 0.0)
    grad_reg = np.zeros_like(x)
    grad_reg[member] = g_mu_reg[cids] / sizes[cids, None]

    grad = cfg.alpha * grad_var + cfg.beta * grad_dist + cfg.gamma * grad_reg
    total = l_sem + cfg.alpha * l_var + cfg.beta * l_dist + cfg.gamma * l_reg
    return LossReport(
        l_sem=l_sem, l_var=l_var, l_dist=l_dist, l_reg=l_reg, total=total,
        grad_embeddings=grad, grad_logits=grad_logits,
    )


LossFn = Callable[[EmbeddingMatrix, np.ndarray, SceneLabels, LossConfig], LossReport]


def _hinge_margins(loss_fn: LossFn, emb: EmbeddingMatrix, labels: SceneLabels,
                   cfg: LossConfig) -> np.ndarray:
    """All hinge margins of the given loss at the given point (kink detection)."""
    x = emb.values
    member, cids, sizes = _compact_members(labels)
    c = sizes.size
    centroids = _cluster_sums(x[member], cids, c) / sizes[:, None]
    if loss_fn is cosine_loss:
        xn = _row_norms(x[member])
        mn = _row_norms(centroids)
        unit_x = x[member] / xn[:, None]
        unit_mu = centroids / mn[:, None]
        m_var = cfg.delta_v - np.einsum("ij,ij->i", unit_x, unit_mu[cids])
        s_mu = unit_mu @ unit_mu.T
        m_dist = (s_mu - cfg.delta_d)[~np.eye(c, dtype=bool)]
    elif loss_fn is euclidean_discriminative_loss:
        m_var = _row_norms(x[member] - centroids[cids]) - cfg.delta_v
        pd = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=2)
        m_dist = (2.0 * cfg.delta_d - pd)[~np.eye(c, dtype=bool)]
    else:
        raise ValueError("unknown loss function for margin inspection")
    return np.concatenate([m_var, m_dist])


def finite_difference_check(
    loss_fn: LossFn,
    emb: EmbeddingMatrix,
    logits: np.ndarray,
    labels: SceneLabels,
    cfg: LossConfig,
    epsilon: float = 1e-6,
) -> float:
    """Central-difference validation of the analytic gradients.

    Perturbs every coordinate of the embeddings and logits by +/- epsilon and
    compares (f+ - f-) / (2 eps) against the analytic gradient, returning the
    max relative error (denominator floored at 1). Inputs sitting within
    10*epsilon of a hinge kink are jittered away first, so the subgradient
    choice at the kink never contaminates the comparison.
    """
    if not (0.0 < epsilon <= 1e-3):
        raise ValueError("epsilon must lie in (0, 1e-3]")
    x = emb.values.copy()
    logits = np.asarray(logits, dtype=np.float64).copy()

    rng = np.random.default_rng(0)
    for _ in range(64):
        margins = _hinge_margins(loss_fn, EmbeddingMatrix(x), labels, cfg)
        if np.all(np.abs(margins) >= 10.0 * epsilon):
            break
        x = x + rng.normal(0.0, 400.0 * epsilon, size=x.shape)
    else:
        raise RuntimeError("could not jitter inputs away from hinge kinks")

    base = loss_fn(EmbeddingMatrix(x), logits, labels, cfg)

    def total_at(xv: np.ndarray, lv: np.ndarray) -> float:
        return loss_fn(EmbeddingMatrix(xv), lv, labels, cfg).total

    max_err = 0.0
    for arr, ana in ((x, base.grad_embeddings), (logits, base.grad_logits)):
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            f_plus = total_at(x, logits)
            flat[j] = orig - epsilon
            f_minus = total_at(x, logits)
            flat[j] = orig
            num = (f_plus - f_minus) / (2.0 * epsilon)
            ref = ana.reshape(-1)[j]
            err = abs(num - ref) / max(1.0, abs(num), abs(ref))
            max_err = max(max_err, err)
    return max_err
