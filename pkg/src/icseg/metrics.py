"""Instance-segmentation evaluation based on set containment.

The containment measure IoS(A, B) = N(A and B) / N(A) is asymmetric: object
A counts as contained in B when IoS(A, B) exceeds the threshold t. With
t > 0.5 an object can be contained in at most one object, which makes the
per-prediction labels well defined:

* TP: prediction and a GT contain each other.
* PD: the prediction is contained in a GT that does not contain it back
  (the prediction covers part of an object).
* FM: a GT is contained in the prediction without mutual containment
  (the prediction merges several objects).
* FP: no containment relation in either direction.

Semantic labels are ignored throughout; noise points (instance -1) belong
to no object on either side. Precision is TP over predictions, recall TP
over GTs, the F-score their harmonic mean; PD/FM/FP are reported as ratios
over the number of predictions, counted at most once per prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SceneLabels


@dataclass
class EvalConfig:
    ios_threshold: float = 0.75
    iou_threshold: float = 0.5
    min_pred_size: int = 35

    def __post_init__(self) -> None:
        if not (0.5 < self.ios_threshold <= 1.0):
            raise ValueError("ios_threshold must lie in (0.5, 1] (containment exclusivity)")
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.min_pred_size < 0:
            raise ValueError("min_pred_size must be >= 0")


@dataclass(eq=False)
class EvalReport:
    n_gt: int
    n_pred: int
    tp: int
    pd: int
    fm: int
    fp: int
    precision: float
    recall: float
    f_score: float
    pd_ratio: float
    fm_ratio: float
    fp_ratio: float
    per_prediction_labels: list[set[str]]


def _objects(labels: SceneLabels) -> dict[int, set[int]]:
    """Instance id -> set of point indices, noise excluded, ids ascending."""
    objects: dict[int, set[int]] = {}
    for idx in np.argsort(labels.instance, kind="stable"):
        inst = int(labels.instance[idx])
        if inst < 0:
            continue
        objects.setdefault(inst, set()).add(int(idx))
    return dict(sorted(objects.items()))


def ios(a: set[int], b: set[int]) -> float:
    """Fraction of A's points contained in B."""
    if len(a) == 0:
        raise ValueError("IoS undefined for an empty first set")
    return len(a & b) / len(a)


def aggregate_results(
    gt: SceneLabels, pred: SceneLabels, t: float
) -> tuple[dict[int, list[int]], dict[int, list[int]]]:
    """Containment maps in both directions at threshold t (strict >).

    gt2pred[g] lists predictions contained in g; pred2gt[p] lists GTs
    contained in p. Every object id appears as a key, possibly with an
    empty list.
    """
    if gt.n_points != pred.n_points:
        raise ValueError("gt and pred must label the same points")
    gt_objects = _objects(gt)
    pred_objects = _objects(pred)
    gt2pred: dict[int, list[int]] = {g: [] for g in gt_objects}
    pred2gt: dict[int, list[int]] = {p: [] for p in pred_objects}
    for g, g_pts in gt_objects.items():
        for p, p_pts in pred_objects.items():
            inter = len(g_pts & p_pts)
            if inter / len(g_pts) > t:  # g is included in p
                pred2gt[p].append(g)
            if inter / len(p_pts) > t:  # p is included in g
                gt2pred[g].append(p)
    return gt2pred, pred2gt


def summarize(
    gt2pred: dict[int, list[int]],
    pred2gt: dict[int, list[int]],
    n_pred: int,
) -> EvalReport:
    """Label every prediction TP/PD/FM/FP from the containment maps."""
    results: dict[int, list[str]] = {p: [] for p in pred2gt}
    for g in gt2pred:
        for p in gt2pred[g]:
            if g in pred2gt[p]:
                results[p].append("TP")
            else:
                results[p].append("PD")
    for p in pred2gt:
        if len(pred2gt[p]) == 0 and results[p] == []:
            results[p].append("FP")
        for g in pred2gt[p]:
            if p not in gt2pred[g]:
                results[p].append("FM")

    label_sets = [set(results[p]) for p in sorted(results)]
    n_gt = len(gt2pred)
    tp = sum("TP" in s for s in label_sets)
    pd = sum("PD" in s for s in label_sets)
    fm = sum("FM" in s for s in label_sets)
    fp = sum("FP" in s for s in label_sets)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f_score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        n_gt=n_gt, n_pred=n_pred, tp=tp, pd=pd, fm=fm, fp=fp,
        precision=precision, recall=recall, f_score=f_score,
        pd_ratio=pd / n_pred if n_pred else 0.0,
        fm_ratio=fm / n_pred if n_pred else 0.0,
        fp_ratio=fp / n_pred if n_pred else 0.0,
        per_prediction_labels=label_sets,
    )


def _drop_small_predictions(pred: SceneLabels, min_pred_size: int) -> SceneLabels:
    kept = pred.instance.copy()
    ids, counts = np.unique(kept[kept >= 0], return_counts=True)
    for inst, size in zip(ids, counts):
        if size < min_pred_size:
            kept[kept == inst] = -1
    return SceneLabels(semantic=pred.semantic.copy(), instance=kept)


def evaluate(gt: SceneLabels, pred: SceneLabels, cfg: EvalConfig) -> EvalReport:
    """Size-filter the predictions, then run the containment analysis."""
    pred = _drop_small_predictions(pred, cfg.min_pred_size)
    gt2pred, pred2gt = aggregate_results(gt, pred, cfg.ios_threshold)
    return summarize(gt2pred, pred2gt, n_pred=len(pred2gt))


SWEEP_GRID = tuple(0.5 + 0.05 * i for i in range(10))  # 0.5 .. 0.95


def sweep_thresholds(gt: SceneLabels, pred: SceneLabels, cfg: EvalConfig,
                     grid: tuple[float, ...] = SWEEP_GRID) -> list[dict[str, float]]:
    """Metric curves over a containment-threshold grid.

    The t = 0.5 grid point is emitted for completeness but sits outside the
    t > 0.5 exclusivity guarantee; treat that row accordingly.
    """
    pred = _drop_small_predictions(pred, cfg.min_pred_size)
    rows = []
    for t in grid:
        gt2pred, pred2gt = aggregate_results(gt, pred, t)
        rep = summarize(gt2pred, pred2gt, n_pred=len(pred2gt))
        rows.append({
            "t": t, "precision": rep.precision, "recall": rep.recall,
            "f1": rep.f_score, "pd": rep.pd_ratio, "fm": rep.fm_ratio,
            "fp": rep.fp_ratio,
        })
    return rows


def _gt_category(labels: SceneLabels, points: set[int]) -> int:
    sems = labels.semantic[sorted(points)]
    counts = np.bincount(sems)
    return int(np.argmax(counts))


def proposal_recall(
    gt: SceneLabels,
    pred: SceneLabels,
    iou_threshold: float,
    categories: list[int] | None = None,
) -> tuple[np.ndarray, float, float]:
    """Best-IoU matching recall, computed regardless of predicted category.

    Each GT object is matched to the prediction with the highest IoU (ties
    to the lowest prediction id) and counts as detected when that IoU
    strictly exceeds the threshold. Returns per-category recalls (aligned
    with `categories`, defaulting to the sorted categories present among
    GT objects), their mean over categories that have GT objects, and the
    overall ratio over all GT objects.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError("iou_threshold must lie in (0, 1]")
    gt_objects = _objects(gt)
    pred_objects = _objects(pred)

    detected: dict[int, bool] = {}
    for g, g_pts in gt_objects.items():
        best = 0.0
        for p, p_pts in pred_objects.items():
            union = len(g_pts | p_pts)
            iou = len(g_pts & p_pts) / union if union else 0.0
            if iou > best:
                best = iou
        detected[g] = best > iou_threshold

    cats = {g: _gt_category(gt, pts) for g, pts in gt_objects.items()}
    if categories is None:
        categories = sorted(set(cats.values()))
    per_category = np.zeros(len(categories))
    present = []
    for k, cat in enumerate(categories):
        members = [g for g in gt_objects if cats[g] == cat]
        if members:
            per_category[k] = sum(detected[g] for g in members) / len(members)
            present.append(k)
    mean = float(per_category[present].mean()) if present else 0.0
    total = (sum(detected.values()) / len(gt_objects)) if gt_objects else 0.0
    return per_category, mean, float(total)
