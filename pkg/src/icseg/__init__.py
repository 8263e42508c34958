"""icseg: instance segmentation on point clouds via cosine-margin embeddings.

Pipeline: generate (or load) a scene, train a linear embedding head with the
cosine-margin loss, extract instances with DBSCAN over embeddings plus
normalized coordinates, and evaluate with the containment-based TP/PD/FM/FP
metric. A benchmark harness measures the linear-vs-quadratic complexity
separation against the pairwise-similarity baseline.
"""

from .bench import BenchResult, CapacityError, pairwise_similarity_loss, run_scaling_sweep
from .clustering import DbscanConfig, build_cluster_features, dbscan, dbscan_brute_force, segment, suppress_small_clusters
from .core import (
    EmbeddingMatrix,
    LossConfig,
    PointCloud,
    SceneFormatError,
    SceneLabels,
    SyntheticSceneSpec,
    compact_instance_ids,
    generate_scene,
    read_labels,
    read_scene,
    write_labels,
    write_scene,
)
from .loss import (
    ClusterStats,
    LossReport,
    cluster_stats,
    cosine_loss,
    cosine_similarity,
    euclidean_discriminative_loss,
    finite_difference_check,
    weighted_cross_entropy,
)
from .metrics import EvalConfig, EvalReport, aggregate_results, evaluate, ios, proposal_recall, summarize, sweep_thresholds
from .trainer import EmbeddingHead, TrainConfig, forward, init_head, load_head, save_head, train

__version__ = "0.1.0"
