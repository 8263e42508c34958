"""Empirical complexity comparison of the two loss formulations.

The pairwise method materializes the full N x N point-similarity matrix
(S_ij = ||f_i - f_j||, expanded through the Gram matrix), which is quadratic
in the number of points in both space and time. The centroid method computes
the cosine hinge terms against per-cluster centroids and is linear in the
number of points (plus a C^2 centroid-pair term, negligible for C << N).

Space is measured by instrumented accounting of the working buffers each
method allocates, not process RSS; timing runs in a single-threaded region
so BLAS thread ramp-up cannot bend the scaling curves.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

log = logging.getLogger(__name__)


class CapacityError(RuntimeError):
    """Raised when the pairwise similarity matrix would exceed the byte cap."""


@dataclass
class BenchResult:
    n_points: int
    method: str          # "pairwise" or "centroid"
    wall_time: float     # seconds, median over repeats
    peak_bytes: int      # instrumented working-buffer bytes
    loss_value: float


def pairwise_similarity_loss(
    features: np.ndarray, max_bytes: int | None = None, out: np.ndarray | None = None
) -> tuple[float, int]:
    """Full pairwise-distance similarity matrix, reduced to a scalar sum.

    Returns (sum of S_ij, working-buffer bytes: the N x N matrix plus the
    squared-norms vector). Raises CapacityError when the matrix would exceed
    max_bytes or cannot be allocated. `out`, if given, is used as the N x N
    buffer so repeated timings measure steady-state computation rather than
    allocator behavior; it is overwritten with S.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ValueError("need at least two points")
    n = features.shape[0]
    need = n * n * 8 + n * 8
    if max_bytes is not None and need > max_bytes:
        raise CapacityError(f"similarity matrix needs {need} bytes, cap is {max_bytes}")
    sq = np.einsum("ij,ij->i", features, features)
    try:
        if out is None:
            s = features @ features.T
        else:
            if out.shape != (n, n):
                raise ValueError("out buffer must be (N, N)")
            s = np.matmul(features, features.T, out=out)
    except MemoryError as exc:
        raise CapacityError(f"similarity matrix allocation failed at N={n}") from exc
    # in-place and block-wise: S = sqrt(sq_i - 2 f_i.f_j + sq_j), clipped
    # against roundoff; row blocks keep each pass cache-resident
    total = 0.0
    block = max(1, (4 << 20) // (n * 8))
    for i0 in range(0, n, block):
        blk = s[i0:i0 + block]
        blk *= -2.0
        blk += sq[i0:i0 + block, None]
        blk += sq[None, :]
        np.maximum(blk, 0.0, out=blk)
        np.sqrt(blk, out=blk)
        total += float(blk.sum())
    peak = s.nbytes + sq.nbytes
    return total, peak


def centroid_similarity_loss(
    embeddings: np.ndarray,
    instance_ids: np.ndarray,
    delta_v: float = 0.9,
    delta_d: float = 0.4,
) -> tuple[float, int]:
    """Cosine hinge terms against cluster centroids (l_var + l_dist, scalar only).

    Working buffers: unit embeddings, per-point norms and similarities, the
    centroid block and its pairwise similarities; linear in N for C << N.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    ids = np.asarray(instance_ids)
    if x.ndim != 2 or x.shape[0] < 1 or ids.shape != (x.shape[0],):
        raise ValueError("embeddings must be (N, d) with one instance id per row")
    _, cids = np.unique(ids, return_inverse=True)
    sizes = np.bincount(cids)
    c = sizes.size

    xn = np.sqrt(np.einsum("ij,ij->i", x, x))
    unit = x / xn[:, None]
    onehot = np.zeros((c, x.shape[0]))
    onehot[cids, np.arange(x.shape[0])] = 1.0
    centroids = (onehot @ x) / sizes[:, None]
    mn = np.sqrt(np.einsum("ij,ij->i", centroids, centroids))
    unit_mu = centroids / mn[:, None]

    sims = np.einsum("ij,ij->i", unit, unit_mu[cids])
    hing = np.maximum(delta_v - sims, 0.0)
    l_var = float(np.mean(np.bincount(cids, weights=hing, minlength=c) / sizes))

    l_dist = 0.0
    s_mu = unit_mu @ unit_mu.T
    if c >= 2:
        np.fill_diagonal(s_mu, 0.0)
        l_dist = float(np.maximum(s_mu - delta_d, 0.0).sum() / (c * (c - 1)))

    peak = (unit.nbytes + xn.nbytes + onehot.nbytes + sims.nbytes + hing.nbytes
            + centroids.nbytes + mn.nbytes + s_mu.nbytes)
    return l_var + l_dist, peak


def run_scaling_sweep(
    n_points_list: list[int],
    d_f: int,
    d_e: int,
    repeats: int = 3,
    rng_seed: int = 0,
    n_clusters: int = 16,
    pairwise_cap_bytes: int | None = 8 << 30,
) -> list[BenchResult]:
    """Time both methods on seeded random data for each point count.

    Wall time is the median of `repeats` runs; loss values are identical
    across repeats by construction. Pairwise configurations whose matrix
    would exceed the cap are skipped and logged, not failed.
    """
    if list(n_points_list) != sorted(n_points_list):
        raise ValueError("n_points_list must be sorted ascending")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    results: list[BenchResult] = []
    with threadpool_limits(limits=1):
        for n in n_points_list:
            rng = np.random.default_rng((rng_seed, n))
            features = rng.standard_normal((n, d_f))
            embeddings = rng.standard_normal((n, d_e))
            ids = rng.integers(0, n_clusters, size=n)

            matrix_buf: np.ndarray | None = None

            def run_pairwise() -> tuple[float, int]:
                return pairwise_similarity_loss(features, max_bytes=pairwise_cap_bytes,
                                                out=matrix_buf)

            def run_centroid() -> tuple[float, int]:
                return centroid_similarity_loss(embeddings, ids)

            for method, fn in (("pairwise", run_pairwise), ("centroid", run_centroid)):
                times, values, peaks = [], [], []
                try:
                    if method == "pairwise":
                        # the reusable matrix lives outside the timed region:
                        # wall time measures computation, not the allocator
                        if pairwise_cap_bytes is not None and n * n * 8 + n * 8 > pairwise_cap_bytes:
                            raise CapacityError(
                                f"similarity matrix needs {n * n * 8 + n * 8} bytes, "
                                f"cap is {pairwise_cap_bytes}")
                        try:
                            matrix_buf = np.empty((n, n))
                        except MemoryError as exc:
                            raise CapacityError(f"allocation failed at N={n}") from exc
                    fn()  # untimed warm-up: absorbs first-touch page faults
                    t0 = time.perf_counter()
                    fn()
                    est = time.perf_counter() - t0
                    # inner iterations keep each timed sample above ~5 ms so
                    # scheduler jitter cannot bend the small-N measurements
                    inner = max(1, int(0.005 / max(est, 1e-9)))
                    for _ in range(repeats):
                        t0 = time.perf_counter()
                        for _ in range(inner):
                            value, peak = fn()
                        times.append((time.perf_counter() - t0) / inner)
                        values.append(value)
                        peaks.append(peak)
                except CapacityError as exc:
                    log.warning("skipping %s at N=%d: %s", method, n, exc)
                    continue
                finally:
                    matrix_buf = None
                if len(set(values)) != 1:
                    raise AssertionError("loss value varied across repeats on fixed data")
                results.append(BenchResult(
                    n_points=n, method=method,
                    wall_time=float(np.median(times)),
                    peak_bytes=peaks[0], loss_value=values[0],
                ))
    return results


def loglog_slope(xs: list[float], ys: list[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    if len(xs) < 2:
        raise ValueError("need at least two points for a slope")
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)),
                            np.log(np.asarray(ys, dtype=float)), 1)[0])


def results_to_csv(results: list[BenchResult]) -> str:
    lines = ["n_points,method,wall_time_s,peak_bytes,loss"]
    for r in results:
        lines.append(f"{r.n_points},{r.method},{r.wall_time:.9f},{r.peak_bytes},{r.loss_value:.17g}")
    return "\n".join(lines) + "\n"
