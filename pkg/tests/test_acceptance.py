"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside the pytest verdicts.
"""

import statistics
import time

import numpy as np

from icseg.bench import loglog_slope, run_scaling_sweep
from icseg.clustering import DbscanConfig, dbscan, dbscan_brute_force, segment
from icseg.core import EmbeddingMatrix, LossConfig, SceneLabels, SyntheticSceneSpec, generate_scene
from icseg.loss import cosine_loss, euclidean_discriminative_loss, finite_difference_check
from icseg.metrics import EvalConfig, aggregate_results, evaluate, summarize
from icseg.trainer import TrainConfig, forward, init_head, train

from test_metrics import oracle_label_sets, _random_pair


def _report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num} {'PASS' if ok else 'FAIL'} - {name}: {detail}")


def test_criterion_1_gradient_fidelity():
    rng = np.random.default_rng(2026)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(8, 65))
        d_e = int(rng.integers(3, 9))
        n_clusters = int(rng.integers(2, 6))
        n_cat = int(rng.integers(2, 5))
        x = rng.normal(0, 1, (n, d_e))
        x += np.sign(x) * 0.2
        logits = rng.normal(0, 1, (n, n_cat))
        labels = SceneLabels(semantic=rng.integers(0, n_cat, n),
                             instance=rng.integers(0, n_clusters, n))
        emb = EmbeddingMatrix(x)
        worst = max(worst, finite_difference_check(
            cosine_loss, emb, logits, labels, LossConfig(), epsilon=1e-5))
        worst = max(worst, finite_difference_check(
            euclidean_discriminative_loss, emb, logits, labels,
            LossConfig(delta_v=0.6, delta_d=0.9, gamma=0.01), epsilon=1e-5))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 30.0
    _report(1, "gradient fidelity", ok,
            f"max_rel_err={worst:.3e} (<1e-5), elapsed={elapsed:.1f}s (<30s), 50 instances x2 losses")
    assert worst < 1e-5
    assert elapsed < 30.0


def test_criterion_2_scale_invariance():
    rng = np.random.default_rng(7)
    x = rng.normal(0, 1, (600, 16))
    x += np.sign(x) * 0.2
    logits = rng.normal(0, 1, (600, 3))
    labels = SceneLabels(semantic=rng.integers(0, 3, 600),
                         instance=rng.integers(0, 6, 600))
    base = cosine_loss(EmbeddingMatrix(x), logits, labels, LossConfig())
    worst = 0.0
    for lam in (0.1, 3.0, 100.0):
        rep = cosine_loss(EmbeddingMatrix(lam * x), logits, labels, LossConfig())
        worst = max(worst, abs(rep.l_var - base.l_var), abs(rep.l_dist - base.l_dist))
    ok = worst < 1e-10
    _report(2, "scale invariance", ok,
            f"max |delta| = {worst:.3e} (<1e-10) over lambda in {{0.1, 3, 100}}")
    assert ok


def _two_hundred_pairs():
    rng = np.random.default_rng(404)
    return [_random_pair(rng, n_max=300, k_max=6) for _ in range(200)]


def test_criterion_3_metric_oracle_equivalence():
    mismatches = 0
    checked = 0
    for gt, pred in _two_hundred_pairs():
        for t in (0.6, 0.75, 0.9):
            gt2pred, pred2gt = aggregate_results(gt, pred, t)
            rep = summarize(gt2pred, pred2gt, n_pred=len(pred2gt))
            if rep.per_prediction_labels != oracle_label_sets(gt, pred, t):
                mismatches += 1
            checked += 1
    ok = mismatches == 0
    _report(3, "metric oracle equivalence", ok,
            f"{mismatches} mismatches over {checked} (200 pairs x 3 thresholds), exact match required")
    assert ok


def test_criterion_4_containment_exclusivity():
    violations = 0
    for gt, pred in _two_hundred_pairs():
        for t in (0.6, 0.75, 0.9):
            gt2pred, pred2gt = aggregate_results(gt, pred, t)
            gt_containers: dict[int, int] = {}
            for p, gs in pred2gt.items():
                for g in gs:
                    gt_containers[g] = gt_containers.get(g, 0) + 1
            pred_containers: dict[int, int] = {}
            for g, ps in gt2pred.items():
                for p in ps:
                    pred_containers[p] = pred_containers.get(p, 0) + 1
            violations += sum(v > 1 for v in gt_containers.values())
            violations += sum(v > 1 for v in pred_containers.values())
    ok = violations == 0
    _report(4, "exclusivity at t > 0.5", ok,
            f"{violations} objects contained in more than one object (must be 0)")
    assert ok


def test_criterion_5_dbscan_oracle_equivalence():
    rng = np.random.default_rng(55)
    mismatches = 0
    for trial in range(100):
        n = int(rng.integers(30, 501))
        d = int(rng.integers(2, 7))
        if trial % 2 == 0:
            feats = rng.uniform(0, 1, (n, d))
            eps = float(rng.uniform(0.05, 0.35))
        else:
            k = int(rng.integers(2, 7))
            centers = rng.uniform(0, 8, (k, d))
            feats = centers[rng.integers(0, k, n)] + rng.normal(0, 0.25, (n, d))
            eps = float(rng.uniform(0.3, 0.9))
        min_pts = int(rng.integers(2, 9))
        if not np.array_equal(dbscan(feats, eps, min_pts),
                              dbscan_brute_force(feats, eps, min_pts)):
            mismatches += 1
    ok = mismatches == 0
    _report(5, "DBSCAN oracle equivalence", ok,
            f"{mismatches} disagreements over 100 instances <= 500 points (exact match)")
    assert ok


def test_criterion_6_end_to_end_segmentation():
    t0 = time.perf_counter()
    f_scores, conv_losses = [], []
    for seed in range(5):
        scenes = [generate_scene(SyntheticSceneSpec(
            n_instances=8, n_categories=3, points_per_instance=(256, 256),
            rng_seed=1000 * seed + k)) for k in range(4)]
        head = init_head(d_in=scenes[0][0].feature_dim + 3, d_e=32,
                         n_categories=3, rng_seed=seed)
        cfg = TrainConfig(learning_rate=0.001, lr_drop_step=1500, total_steps=2000,
                          batch_size=4, rng_seed=seed,
                          loss=LossConfig(delta_v=0.9, delta_d=0.4, alpha=0.5, beta=0.5))
        head, _ = train(head, scenes, cfg)
        cloud, gt = scenes[0]
        rep = cosine_loss(*forward(head, cloud), gt, cfg.loss)
        conv_losses.append(rep.l_var + rep.l_dist)
        pred = segment(head, cloud, per_category=True, cfg=DbscanConfig())
        f_scores.append(evaluate(gt, pred, EvalConfig(ios_threshold=0.75)).f_score)
    elapsed = time.perf_counter() - t0
    med_f = statistics.median(f_scores)
    med_conv = statistics.median(conv_losses)
    ok = med_f >= 0.9 and med_conv < 0.05 and elapsed < 300.0
    _report(6, "end-to-end desk-scale segmentation", ok,
            f"median F={med_f:.3f} (>=0.9), median l_var+l_dist={med_conv:.4f} (<0.05), "
            f"elapsed={elapsed:.0f}s (<300s); F per seed={[round(f, 3) for f in f_scores]}")
    assert med_f >= 0.9
    assert med_conv < 0.05
    assert elapsed < 300.0


def test_criterion_7_complexity_separation():
    t0 = time.perf_counter()
    results = run_scaling_sweep([2**k for k in range(10, 15)], d_f=32, d_e=32,
                                repeats=5, rng_seed=0)
    elapsed = time.perf_counter() - t0
    slopes = {}
    for method in ("pairwise", "centroid"):
        rows = [r for r in results if r.method == method]
        assert len(rows) == 5
        ns = [r.n_points for r in rows]
        slopes[method] = (loglog_slope(ns, [r.peak_bytes for r in rows]),
                          loglog_slope(ns, [r.wall_time for r in rows]))
    pb, pt = slopes["pairwise"]
    cb, ct = slopes["centroid"]
    ok = (1.9 <= pb <= 2.1 and 0.9 <= cb <= 1.1
          and 1.8 <= pt <= 2.2 and 0.8 <= ct <= 1.2 and elapsed < 120.0)
    _report(7, "complexity separation", ok,
            f"pairwise bytes={pb:.3f} in [1.9,2.1], time={pt:.2f} in [1.8,2.2]; "
            f"centroid bytes={cb:.3f} in [0.9,1.1], time={ct:.2f} in [0.8,1.2]; "
            f"elapsed={elapsed:.0f}s (<120s)")
    assert 1.9 <= pb <= 2.1
    assert 0.9 <= cb <= 1.1
    assert 1.8 <= pt <= 2.2
    assert 0.8 <= ct <= 1.2
    assert elapsed < 120.0


def test_criterion_8_semantic_fm_signature():
    holds = 0
    for seed in range(20):
        spec = SyntheticSceneSpec(n_instances=6, n_categories=2,
                                  points_per_instance=(60, 90), rng_seed=seed)
        _, gt = generate_scene(spec)
        cfg = EvalConfig(ios_threshold=0.75)
        # one-instance-per-category oracle predictor
        sem_pred = SceneLabels(semantic=gt.semantic.copy(), instance=gt.semantic.copy())
        sem_rep = evaluate(gt, sem_pred, cfg)
        # per-instance oracle predictor
        inst_rep = evaluate(gt, gt, cfg)
        if sem_rep.fm_ratio > 0 and sem_rep.pd == 0 and inst_rep.f_score == 1.0:
            holds += 1
    ok = holds == 20
    _report(8, "semantic-segmentation FM signature", ok,
            f"property held on {holds}/20 seeded scenes (requires 20/20)")
    assert ok
