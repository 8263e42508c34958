"""Domain types, synthetic scene generation, and scene/label file I/O.

A scene is a point cloud (coordinates, colors, per-point features) plus
per-point semantic and instance labels. Instance id -1 means "noise /
belongs to no instance"; ground-truth generators never emit it, clustering
output may.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SceneFormatError(ValueError):
    """Raised when a scene or label file is malformed."""


@dataclass(eq=False)
class PointCloud:
    """Raw scene: coordinates in meters, RGB colors in [0,1], input features."""

    coords: np.ndarray    # (n_points, 3)
    colors: np.ndarray    # (n_points, 3)
    features: np.ndarray  # (n_points, d_f)

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        n = self.coords.shape[0]
        if n < 1:
            raise ValueError("point cloud needs at least one point")
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValueError(f"coords must be (n,3), got {self.coords.shape}")
        if self.colors.shape != (n, 3):
            raise ValueError(f"colors must be ({n},3), got {self.colors.shape}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(f"features must have {n} rows, got {self.features.shape}")
        if np.any(self.colors < 0.0) or np.any(self.colors > 1.0):
            raise ValueError("color entries must lie in [0,1]")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass(eq=False)
class SceneLabels:
    """Per-point semantic category and instance id (-1 = noise)."""

    semantic: np.ndarray  # (n_points,) int
    instance: np.ndarray  # (n_points,) int, >= 0 or -1

    def __post_init__(self) -> None:
        self.semantic = np.asarray(self.semantic, dtype=np.int64)
        self.instance = np.asarray(self.instance, dtype=np.int64)
        if self.semantic.shape != self.instance.shape or self.semantic.ndim != 1:
            raise ValueError("semantic and instance must be 1-D vectors of equal length")
        if np.any(self.instance < -1):
            raise ValueError("instance ids must be >= 0 or -1")

    @property
    def n_points(self) -> int:
        return self.semantic.shape[0]

    def semantic_violations(self) -> int:
        """Number of instances whose points disagree on the semantic id.

        Predictions may legitimately violate this; it is recorded, not rejected.
        """
        bad = 0
        for inst in np.unique(self.instance):
            if inst < 0:
                continue
            if np.unique(self.semantic[self.instance == inst]).size > 1:
                bad += 1
        return bad

    def validate_gt(self) -> None:
        """Enforce the ground-truth contract: semantically consistent instances."""
        n_bad = self.semantic_violations()
        if n_bad:
            raise ValueError(f"{n_bad} instance(s) mix semantic categories in GT labels")


@dataclass(eq=False)
class EmbeddingMatrix:
    """Per-point embeddings, one row per point."""

    values: np.ndarray  # (n_points, d_e)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("embeddings must be a 2-D matrix")
        if self.values.shape[1] < 2:
            raise ValueError("embedding dimension must be >= 2")

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class LossConfig:
    """Margins and weights shared by the cosine and Euclidean losses.

    For the cosine loss delta_v/delta_d are cosine-similarity margins
    (delta_d < delta_v, delta_v close to 1); for the Euclidean baseline
    they are distances. Range checks specific to each interpretation are
    applied by the loss functions themselves.
    class_weights is a per-category vector for the semantic term; None
    means inverse-frequency weights normalized to mean 1, computed from
    the labels at hand.
    """

    delta_v: float = 0.9
    delta_d: float = 0.4
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.005  # baseline regularizer weight only
    class_weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.class_weights is not None:
            self.class_weights = np.asarray(self.class_weights, dtype=np.float64)
            if np.any(self.class_weights <= 0):
                raise ValueError("class weights must be positive")


@dataclass
class SyntheticSceneSpec:
    """Deterministic desk-scale scene recipe.

    Instances are isotropic Gaussian blobs (sigma = region_size / (4 sqrt(K)))
    around centers drawn uniformly in [0, region_size]^3, so blobs overlap
    enough that coordinates alone do not separate them. Each point's feature
    row is the instance's one-hot signature (width feature_dim) corrupted by
    Gaussian noise, followed by the point's coordinates normalized by
    region_size; the emitted feature width is therefore feature_dim + 3.
    Instance k gets semantic category k mod n_categories.
    """

    n_instances: int = 8
    n_categories: int = 3
    points_per_instance: tuple[int, int] = (256, 256)
    region_size: float = 4.0
    feature_dim: int = 8
    noise_sigma: float = 0.05
    rng_seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.points_per_instance
        if self.n_instances < 1:
            raise ValueError("need at least one instance")
        if self.n_categories < 1:
            raise ValueError("need at least one category")
        if lo < 1 or hi < lo:
            raise ValueError("points_per_instance must be a range with 1 <= lo <= hi")
        if self.region_size <= 0:
            raise ValueError("region_size must be positive")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def generate_scene(spec: SyntheticSceneSpec) -> tuple[PointCloud, SceneLabels]:
    """Generate a synthetic scene; a pure function of the spec.

    Same spec (including rng_seed) produces bit-identical output.
    """
    k = spec.n_instances
    rng = np.random.default_rng(spec.rng_seed)

    centers = rng.uniform(0.0, spec.region_size, size=(k, 3))
    lo, hi = spec.points_per_instance
    sizes = rng.integers(lo, hi + 1, size=k)
    base_colors = rng.uniform(0.0, 1.0, size=(k, 3))
    sigma_blob = spec.region_size / (4.0 * np.sqrt(k))

    coords_parts, colors_parts, feat_parts, sem_parts, inst_parts = [], [], [], [], []
    for inst in range(k):
        n = int(sizes[inst])
        pts = centers[inst] + rng.normal(0.0, sigma_blob, size=(n, 3))
        np.clip(pts, 0.0, spec.region_size, out=pts)

        cols = base_colors[inst] + rng.normal(0.0, 0.02, size=(n, 3))
        np.clip(cols, 0.0, 1.0, out=cols)

        signature = np.zeros(spec.feature_dim)
        signature[inst % spec.feature_dim] = 1.0
        sig = signature + rng.normal(0.0, spec.noise_sigma, size=(n, spec.feature_dim))
        feats = np.concatenate([sig, pts / spec.region_size], axis=1)

        coords_parts.append(pts)
        colors_parts.append(cols)
        feat_parts.append(feats)
        sem_parts.append(np.full(n, inst % spec.n_categories, dtype=np.int64))
        inst_parts.append(np.full(n, inst, dtype=np.int64))

    cloud = PointCloud(
        coords=np.concatenate(coords_parts),
        colors=np.concatenate(colors_parts),
        features=np.concatenate(feat_parts),
    )
    labels = SceneLabels(
        semantic=np.concatenate(sem_parts),
        instance=np.concatenate(inst_parts),
    )
    return cloud, labels


def compact_instance_ids(labels: SceneLabels) -> SceneLabels:
    """Remap instance ids >= 0 to 0..C-1 (sorted-id order); -1 passes through.

    Idempotent, and preserves the partition: two points share an id before
    iff they share one after (noise excluded).
    """
    inst = labels.instance
    out = np.full_like(inst, -1)
    kept = inst >= 0
    ids = np.unique(inst[kept])
    remap = {int(old): new for new, old in enumerate(ids)}
    if kept.any():
        out[kept] = np.array([remap[int(v)] for v in inst[kept]], dtype=np.int64)
    return SceneLabels(semantic=labels.semantic.copy(), instance=out)


# --- scene / label text formats ------------------------------------------
#
# Scene file: header "SPC1 <n_points> <d_f> <n_categories>", then one line
# per point: x y z r g b f_1 .. f_{d_f} sem inst.
# Label file: one line per point: sem inst.

_SCENE_MAGIC = "SPC1"


def write_scene(path: str | Path, cloud: PointCloud, labels: SceneLabels,
                n_categories: int) -> None:
    if labels.n_points != cloud.n_points:
        raise ValueError("labels and cloud disagree on point count")
    d_f = cloud.feature_dim
    rows = np.concatenate([cloud.coords, cloud.colors, cloud.features], axis=1)
    with open(path, "w") as fh:
        fh.write(f"{_SCENE_MAGIC} {cloud.n_points} {d_f} {n_categories}\n")
        for i in range(cloud.n_points):
            nums = " ".join(f"{v:.17g}" for v in rows[i])
            fh.write(f"{nums} {labels.semantic[i]} {labels.instance[i]}\n")


def read_scene(path: str | Path) -> tuple[PointCloud, SceneLabels, int]:
    """Parse a scene file; raises SceneFormatError on malformed input."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != _SCENE_MAGIC:
            raise SceneFormatError(f"{path}: bad scene header (expected '{_SCENE_MAGIC} n d_f n_categories')")
        try:
            n_points, d_f, n_categories = (int(tok) for tok in header[1:])
        except ValueError as exc:
            raise SceneFormatError(f"{path}: non-integer scene header fields") from exc
        if n_points < 1 or d_f < 0 or n_categories < 1:
            raise SceneFormatError(f"{path}: implausible scene header counts")

        width = 3 + 3 + d_f + 2
        data = np.empty((n_points, width))
        for i in range(n_points):
            parts = fh.readline().split()
            if len(parts) != width:
                raise SceneFormatError(f"{path}: line {i + 2}: expected {width} fields, got {len(parts)}")
            try:
                data[i] = [float(tok) for tok in parts]
            except ValueError as exc:
                raise SceneFormatError(f"{path}: line {i + 2}: non-numeric field") from exc

    sem = data[:, 6 + d_f].astype(np.int64)
    inst = data[:, 7 + d_f].astype(np.int64)
    if np.any(data[:, 6 + d_f:] != np.floor(data[:, 6 + d_f:])):
        raise SceneFormatError(f"{path}: non-integer label columns")
    cloud = PointCloud(coords=data[:, 0:3], colors=data[:, 3:6], features=data[:, 6:6 + d_f])
    labels = SceneLabels(semantic=sem, instance=inst)
    labels.validate_gt()
    return cloud, labels, n_categories


def write_labels(path: str | Path, labels: SceneLabels) -> None:
    with open(path, "w") as fh:
        for s, i in zip(labels.semantic, labels.instance):
            fh.write(f"{s} {i}\n")


def read_labels(path: str | Path) -> SceneLabels:
    """Parse a prediction/GT label file (one 'sem inst' pair per line)."""
    sems, insts = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise SceneFormatError(f"{path}: line {lineno}: expected 'sem inst'")
            try:
                sems.append(int(parts[0]))
                insts.append(int(parts[1]))
            except ValueError as exc:
                raise SceneFormatError(f"{path}: line {lineno}: non-integer label") from exc
    if not sems:
        raise SceneFormatError(f"{path}: empty label file")
    return SceneLabels(semantic=np.array(sems), instance=np.array(insts))
