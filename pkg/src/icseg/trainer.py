"""Single fully connected embedding head trained with Adam.

The head maps each point's input row [features; rgb] to a d_e-dimensional
embedding; a parallel linear classifier on the same input produces the
semantic logits. Training minimizes the cosine-margin loss total with
analytic gradients; no autodiff framework is involved.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import EmbeddingMatrix, LossConfig, PointCloud, SceneLabels
from .loss import cosine_loss


class CheckpointFormatError(ValueError):
    """Raised when a head checkpoint file is malformed."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(eq=False)
class EmbeddingHead:
    weight: np.ndarray             # (d_e, d_in)
    bias: np.ndarray               # (d_e,)
    classifier_weight: np.ndarray  # (n_categories, d_in)
    classifier_bias: np.ndarray    # (n_categories,)
    normalize_rows: bool = False

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.classifier_weight = np.asarray(self.classifier_weight, dtype=np.float64)
        self.classifier_bias = np.asarray(self.classifier_bias, dtype=np.float64)
        d_e, d_in = self.weight.shape
        if self.bias.shape != (d_e,):
            raise ValueError("bias shape does not match weight rows")
        if self.classifier_weight.shape[1] != d_in:
            raise ValueError("classifier input width differs from embedding head")
        if self.classifier_bias.shape != (self.classifier_weight.shape[0],):
            raise ValueError("classifier bias shape mismatch")

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_e(self) -> int:
        return self.weight.shape[0]

    @property
    def n_categories(self) -> int:
        return self.classifier_weight.shape[0]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    lr_drop_step: int = 1500
    lr_drop_factor: float = 0.1
    batch_size: int = 4
    total_steps: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def init_head(d_in: int, d_e: int, n_categories: int, rng_seed: int = 0,
              normalize_rows: bool = False) -> EmbeddingHead:
    """Seeded uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization."""
    rng = np.random.default_rng(rng_seed)
    bound = 1.0 / np.sqrt(d_in)
    return EmbeddingHead(
        weight=rng.uniform(-bound, bound, size=(d_e, d_in)),
        bias=rng.uniform(-bound, bound, size=d_e),
        classifier_weight=rng.uniform(-bound, bound, size=(n_categories, d_in)),
        classifier_bias=rng.uniform(-bound, bound, size=n_categories),
        normalize_rows=normalize_rows,
    )


def head_input(cloud: PointCloud) -> np.ndarray:
    """Per-point input rows for the head: features concatenated with RGB."""
    return np.concatenate([cloud.features, cloud.colors], axis=1)


def forward(head: EmbeddingHead, cloud: PointCloud) -> tuple[EmbeddingMatrix, np.ndarray]:
    """Affine embedding (optionally row-normalized) and semantic logits."""
    u = head_input(cloud)
    if u.shape[1] != head.d_in:
        raise ValueError(f"head expects input width {head.d_in}, scene provides {u.shape[1]}")
    # contiguous transposes: this BLAS is ~20x slower on transposed views
    z = u @ np.ascontiguousarray(head.weight.T) + head.bias
    if head.normalize_rows:
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize a zero-norm embedding row")
        z = z / norms
    logits = u @ np.ascontiguousarray(head.classifier_weight.T) + head.classifier_bias
    return EmbeddingMatrix(z), logits


def _scene_gradients(
    head: EmbeddingHead, u: np.ndarray, labels: SceneLabels, loss_cfg: LossConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Total loss and parameter gradients for one scene (inputs precomputed)."""
    z = u @ np.ascontiguousarray(head.weight.T) + head.bias
    if head.normalize_rows:
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize a zero-norm embedding row")
        h = z / norms
    else:
        h = z
    logits = u @ np.ascontiguousarray(head.classifier_weight.T) + head.classifier_bias
    report = cosine_loss(EmbeddingMatrix(h), logits, labels, loss_cfg)

    gh = report.grad_embeddings
    if head.normalize_rows:
        # back through h = z / ||z||: (I - h h^T) / ||z||
        gz = (gh - (gh * h).sum(axis=1, keepdims=True) * h) / norms
    else:
        gz = gh
    grads = {
        "weight": (u.T @ gz).T,
        "bias": gz.sum(axis=0),
        "classifier_weight": (u.T @ report.grad_logits).T,
        "classifier_bias": report.grad_logits.sum(axis=0),
    }
    return report.total, grads


class Adam:
    """Standard Adam update over a dict of named parameter arrays."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], beta1: float, beta2: float,
                 eps: float) -> None:
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        self.t += 1
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / (1.0 - self.beta1**self.t)
            v_hat = self.v[k] / (1.0 - self.beta2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(
    head: EmbeddingHead,
    scenes: list[tuple[PointCloud, SceneLabels]],
    cfg: TrainConfig,
) -> tuple[EmbeddingHead, list[float]]:
    """Adam-train a copy of the head on the given scenes.

    Each step samples batch_size scenes with replacement (seeded), averages
    their analytic gradients, and applies one Adam update. The learning rate
    is multiplied by lr_drop_factor at step lr_drop_step (1-based). Returns
    the trained head and the per-step mean total loss. Deterministic for a
    fixed config and scene list.
    """
    if not scenes:
        raise ValueError("need at least one training scene")
    head = copy.deepcopy(head)
    params = {
        "weight": head.weight,
        "bias": head.bias,
        "classifier_weight": head.classifier_weight,
        "classifier_bias": head.classifier_bias,
    }
    opt = Adam({k: p.shape for k, p in params.items()},
               cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    inputs = [head_input(cloud) for cloud, _ in scenes]
    rng = np.random.default_rng(cfg.rng_seed)
    lr = cfg.learning_rate
    history: list[float] = []

    for step in range(1, cfg.total_steps + 1):
        if step == cfg.lr_drop_step:
            lr *= cfg.lr_drop_factor
        batch = rng.integers(0, len(scenes), size=cfg.batch_size)
        acc = {k: np.zeros_like(p) for k, p in params.items()}
        batch_loss = 0.0
        for idx in batch:
            total, grads = _scene_gradients(head, inputs[idx], scenes[idx][1], cfg.loss)
            batch_loss += total
            for k in acc:
                acc[k] += grads[k]
        batch_loss /= cfg.batch_size
        for k in acc:
            acc[k] /= cfg.batch_size
        if not np.isfinite(batch_loss):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        opt.step(params, acc, lr)
        history.append(batch_loss)
    return head, history


# --- checkpoint text format ------------------------------------------------
#
# Header "HEAD1 <d_in> <d_e> <n_categories> <normalize:0|1>", then the weight
# matrix row-major (one row per line), the bias line, the classifier weight
# rows, and the classifier bias line. %.17g keeps round trips exact.

_HEAD_MAGIC = "HEAD1"


def save_head(path: str | Path, head: EmbeddingHead) -> None:
    def fmt(row: np.ndarray) -> str:
        return " ".join(f"{v:.17g}" for v in np.atleast_1d(row))

    with open(path, "w") as fh:
        fh.write(f"{_HEAD_MAGIC} {head.d_in} {head.d_e} {head.n_categories} "
                 f"{1 if head.normalize_rows else 0}\n")
        for row in head.weight:
            fh.write(fmt(row) + "\n")
        fh.write(fmt(head.bias) + "\n")
        for row in head.classifier_weight:
            fh.write(fmt(row) + "\n")
        fh.write(fmt(head.classifier_bias) + "\n")


def load_head(path: str | Path) -> EmbeddingHead:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[0] != _HEAD_MAGIC:
            raise CheckpointFormatError(f"{path}: bad checkpoint header")
        try:
            d_in, d_e, n_cat, norm_flag = (int(tok) for tok in header[1:])
        except ValueError as exc:
            raise CheckpointFormatError(f"{path}: non-integer header fields") from exc
        if d_in < 1 or d_e < 2 or n_cat < 1 or norm_flag not in (0, 1):
            raise CheckpointFormatError(f"{path}: implausible checkpoint header")
        values = fh.read().split()
    expected = d_e * d_in + d_e + n_cat * d_in + n_cat
    if len(values) != expected:
        raise CheckpointFormatError(f"{path}: expected {expected} parameters, got {len(values)}")
    try:
        flat = np.array([float(tok) for tok in values])
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: non-numeric parameter") from exc
    ofs = 0

    def take(n: int) -> np.ndarray:
        nonlocal ofs
        out = flat[ofs:ofs + n]
        ofs += n
        return out

    return EmbeddingHead(
        weight=take(d_e * d_in).reshape(d_e, d_in),
        bias=take(d_e),
        classifier_weight=take(n_cat * d_in).reshape(n_cat, d_in),
        classifier_bias=take(n_cat),
        normalize_rows=bool(norm_flag),
    )
