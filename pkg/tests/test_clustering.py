import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icseg.clustering import (
    DbscanConfig,
    build_cluster_features,
    dbscan,
    dbscan_brute_force,
    segment,
    suppress_small_clusters,
)
from icseg.core import EmbeddingMatrix, PointCloud, SyntheticSceneSpec, generate_scene
from icseg.trainer import EmbeddingHead, TrainConfig, init_head, train


def _cloud(coords):
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    return PointCloud(coords=coords, colors=np.full((n, 3), 0.5),
                      features=np.zeros((n, 2)))


def _partition(labels):
    clusters = {}
    for idx, lab in enumerate(labels):
        if lab >= 0:
            clusters.setdefault(lab, set()).add(idx)
    noise = {idx for idx, lab in enumerate(labels) if lab < 0}
    return frozenset(frozenset(v) for v in clusters.values()), noise


# --- build_cluster_features --------------------------------------------------


def test_features_weight_zero_pads_zeros():
    emb = EmbeddingMatrix(np.random.default_rng(0).normal(size=(5, 4)))
    cloud = _cloud(np.random.default_rng(1).uniform(0, 3, (5, 3)))
    out = build_cluster_features(emb, cloud, coord_weight=0.0)
    np.testing.assert_array_equal(out[:, :4], emb.values)
    np.testing.assert_array_equal(out[:, 4:], 0.0)


def test_features_unit_coords_pass_through():
    coords = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.25, 0.5, 0.75]])
    emb = EmbeddingMatrix(np.ones((3, 2)))
    out = build_cluster_features(emb, _cloud(coords), coord_weight=1.0)
    np.testing.assert_allclose(out[:, 2:], coords)


def test_features_single_point_degenerate():
    emb = EmbeddingMatrix(np.ones((1, 2)))
    out = build_cluster_features(emb, _cloud([[5.0, 6.0, 7.0]]), coord_weight=1.0)
    np.testing.assert_array_equal(out[0, 2:], 0.0)


# --- dbscan ------------------------------------------------------------------


def test_two_separated_blobs():
    rng = np.random.default_rng(2)
    blob1 = rng.uniform(-0.05, 0.05, (12, 3))
    blob2 = rng.uniform(-0.05, 0.05, (9, 3)) + 10.0
    feats = np.concatenate([blob1, blob2])
    labels = dbscan(feats, eps=0.2, min_pts=4)
    assert set(labels[:12]) == {0}
    assert set(labels[12:]) == {1}


def test_all_noise():
    feats = np.arange(6, dtype=float).reshape(6, 1) * 10.0
    labels = dbscan(feats, eps=1.0, min_pts=2)
    assert np.all(labels == -1)


def test_single_point():
    assert dbscan(np.zeros((1, 3)), eps=0.5, min_pts=1).tolist() == [0]
    assert dbscan(np.zeros((1, 3)), eps=0.5, min_pts=2).tolist() == [-1]


@pytest.mark.parametrize("seed", range(8))
def test_grid_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 300))
    d = int(rng.integers(2, 6))
    feats = rng.uniform(0, 1, (n, d))
    eps = float(rng.uniform(0.08, 0.3))
    min_pts = int(rng.integers(2, 8))
    fast = dbscan(feats, eps, min_pts)
    slow = dbscan_brute_force(feats, eps, min_pts)
    np.testing.assert_array_equal(fast, slow)


def test_grid_matches_brute_on_blobs():
    rng = np.random.default_rng(77)
    centers = rng.uniform(0, 10, (5, 4))
    feats = np.concatenate([c + rng.normal(0, 0.2, (40, 4)) for c in centers])
    fast = dbscan(feats, eps=0.6, min_pts=5)
    slow = dbscan_brute_force(feats, eps=0.6, min_pts=5)
    np.testing.assert_array_equal(fast, slow)
    assert len(set(fast[fast >= 0])) == 5


def test_partition_invariant_to_permutation():
    # separated blobs: no border point is reachable from two clusters,
    # so the partition is permutation-invariant
    rng = np.random.default_rng(5)
    centers = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0]])
    feats = np.concatenate([c + rng.normal(0, 0.15, (30, 2)) for c in centers])
    base_parts, base_noise = _partition(dbscan(feats, eps=0.5, min_pts=4))
    for pseed in range(5):
        perm = np.random.default_rng(pseed).permutation(len(feats))
        labels_p = dbscan(feats[perm], eps=0.5, min_pts=4)
        # map clustered indices back to the original frame
        back = np.empty_like(labels_p)
        back[perm] = labels_p
        parts, noise = _partition(back)
        assert parts == base_parts
        assert noise == base_noise


# --- suppression -------------------------------------------------------------


def test_suppress_examples():
    labels = np.array([0] * 40 + [1] * 10)
    out = suppress_small_clusters(labels, 35)
    assert set(out[:40]) == {0}
    assert set(out[40:]) == {-1}

    labels = np.array([0, 1, 1, 2, -1])
    np.testing.assert_array_equal(suppress_small_clusters(labels, 1), labels)

    out = suppress_small_clusters(np.array([0, 1, 2]), 2)
    assert np.all(out == -1)


@given(st.lists(st.integers(min_value=-1, max_value=6), min_size=1, max_size=50),
       st.integers(min_value=1, max_value=10))
@settings(max_examples=150, deadline=None)
def test_suppress_never_grows_clusters(raw, min_size):
    labels = np.array(raw)
    out = suppress_small_clusters(labels, min_size)
    before = {k: np.sum(labels == k) for k in set(labels) if k >= 0}
    after_sizes = sorted(np.sum(out == k) for k in set(out) if k >= 0)
    kept = sorted(v for v in before.values() if v >= min_size)
    assert after_sizes == kept  # survivors keep their size; nothing new appears
    assert np.all((out >= 0) <= (labels >= 0))  # no noise point gains a cluster


# --- segment -----------------------------------------------------------------


def test_segment_single_instance_scene():
    spec = SyntheticSceneSpec(n_instances=1, n_categories=1,
                              points_per_instance=(200, 200), rng_seed=4)
    cloud, labels = generate_scene(spec)
    head = init_head(cloud.feature_dim + 3, 8, 1, rng_seed=0)
    head, _ = train(head, [(cloud, labels)],
                    TrainConfig(total_steps=100, lr_drop_step=0, batch_size=1))
    pred = segment(head, cloud, per_category=True, cfg=DbscanConfig())
    kept = pred.instance[pred.instance >= 0]
    assert kept.size >= 100  # one dominant cluster covering the instance core
    assert len(set(kept.tolist())) == 1


def test_segment_per_category_vacuous_for_one_category():
    spec = SyntheticSceneSpec(n_instances=3, n_categories=1,
                              points_per_instance=(60, 60), rng_seed=6)
    cloud, _ = generate_scene(spec)
    head = init_head(cloud.feature_dim + 3, 8, 1, rng_seed=1)
    cfg = DbscanConfig(min_cluster_size=5)
    on = segment(head, cloud, per_category=True, cfg=cfg)
    off = segment(head, cloud, per_category=False, cfg=cfg)
    np.testing.assert_array_equal(on.instance, off.instance)
    np.testing.assert_array_equal(on.semantic, off.semantic)


def test_segment_empty_category_emits_nothing():
    spec = SyntheticSceneSpec(n_instances=2, n_categories=1,
                              points_per_instance=(50, 50), rng_seed=8)
    cloud, _ = generate_scene(spec)
    d_in = cloud.feature_dim + 3
    head = init_head(d_in, 6, 3, rng_seed=2)
    head.classifier_weight[:] = 0.0
    head.classifier_bias[:] = [10.0, 0.0, -10.0]  # argmax always category 0
    pred = segment(head, cloud, per_category=True, cfg=DbscanConfig(min_cluster_size=5))
    assert set(pred.semantic.tolist()) == {0}
    # ids stay contiguous from the only populated category
    kept = pred.instance[pred.instance >= 0]
    if kept.size:
        assert kept.min() == 0


def test_dbscan_config_validation():
    with pytest.raises(ValueError):
        DbscanConfig(eps=0.0)
    with pytest.raises(ValueError):
        DbscanConfig(min_pts=0)
    with pytest.raises(ValueError):
        DbscanConfig(coord_weight=-1.0)
