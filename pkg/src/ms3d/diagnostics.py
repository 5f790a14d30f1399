"""Measurement instruments for watching a discriminator's gradient field.

Covers the aggregation metric (connected above-threshold regions of the
field), a diagonal Fisher-trace estimate of how sensitive the gradient
field is to the weights, mean pairwise cosine similarity of data
embeddings, and two-direction loss-landscape slices.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, UnreachableGradientWarning, backward, forward_op

__all__ = [
    "AggregationResult",
    "CosineResult",
    "MetricRecord",
    "aggregation_metric",
    "fisher_trace",
    "loss_slice",
    "mean_pairwise_cosine",
]


@dataclass(frozen=True)
class AggregationResult:
    """Connected-region count of a thresholded field and its pixel ratio."""

    n_agg: int
    r_agg: float
    tau: float
    connectivity: int


@dataclass(frozen=True)
class CosineResult:
    """Mean pairwise cosine similarity; pairs with a zero vector are skipped."""

    value: float
    skipped_pairs: int


@dataclass
class MetricRecord:
    """One row of training diagnostics."""

    step: int
    d_train: float
    d_val: float
    d_fake: float
    r_agg: float
    ms3d: float
    fisher: float
    cosine: float

    CSV_HEADER = "step,d_train,d_val,d_fake,r_agg,ms3d,fisher,cosine"

    def csv_row(self) -> str:
        return ",".join([
            str(self.step),
            repr(self.d_train), repr(self.d_val), repr(self.d_fake),
            repr(self.r_agg), repr(self.ms3d), repr(self.fisher), repr(self.cosine),
        ])


# ---------------------------------------------------------------------------
# Aggregation metric
# ---------------------------------------------------------------------------

def _find(parent: list[int], i: int) -> int:
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:  # path compression
        parent[i], i = root, parent[i]
    return root


def _union(parent: list[int], a: int, b: int):
    ra, rb = _find(parent, a), _find(parent, b)
    if ra != rb:
        parent[max(ra, rb)] = min(ra, rb)


def label_components(binary: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Two-pass union-find connected-component labeling of a binary grid.

    Returns (labels, count); labels are 1-based, 0 marks background.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    grid = np.asarray(binary, dtype=bool)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2-d grid, got shape {grid.shape}")
    h, w = grid.shape
    labels = np.zeros((h, w), dtype=np.int64)
    parent: list[int] = [0]  # parent[0] unused; labels start at 1
    next_label = 1
    for i in range(h):
        for j in range(w):
            if not grid[i, j]:
                continue
            neighbors = []
            if j > 0 and grid[i, j - 1]:
                neighbors.append(labels[i, j - 1])
            if i > 0:
                if grid[i - 1, j]:
                    neighbors.append(labels[i - 1, j])
                if connectivity == 8:
                    if j > 0 and grid[i - 1, j - 1]:
                        neighbors.append(labels[i - 1, j - 1])
                    if j < w - 1 and grid[i - 1, j + 1]:
                        neighbors.append(labels[i - 1, j + 1])
            if not neighbors:
                labels[i, j] = next_label
                parent.append(next_label)
                next_label += 1
            else:
                smallest = min(neighbors)
                labels[i, j] = smallest
                for other in neighbors:
                    _union(parent, smallest, other)
    # second pass: collapse to root labels, renumber densely
    remap: dict[int, int] = {}
    for i in range(h):
        for j in range(w):
            if labels[i, j]:
                root = _find(parent, int(labels[i, j]))
                if root not in remap:
                    remap[root] = len(remap) + 1
                labels[i, j] = remap[root]
    return labels, len(remap)


def aggregation_metric(field2d: np.ndarray, tau: float = 0.2,
                       connectivity: int = 8) -> AggregationResult:
    """Count connected regions of the field above ``tau``.

    The field is expected normalized to [0, 1]; cells strictly above the
    threshold are active.  ``r_agg`` is the region count over total pixels.
    """
    if not (0.0 < tau < 1.0):
        raise ValueError(f"tau must be inside (0, 1), got {tau}")
    arr = np.asarray(field2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d field, got shape {arr.shape}")
    _, count = label_components(arr > tau, connectivity)
    return AggregationResult(count, count / arr.size, tau, connectivity)


# ---------------------------------------------------------------------------
# Fisher trace
# ---------------------------------------------------------------------------

def fisher_trace(x: Tensor, discriminator, num_probes: int = 8, seed: int = 0,
                 probes: np.ndarray | None = None) -> float:
    """Diagonal Fisher-trace estimate of the input-gradient map.

    Treats the gradient field as the mean of a unit-variance Gaussian over
    outputs and probes it: for standard-normal ``eps``, the squared norm of
    d<grad_field, eps>/d(weights) averaged over probes and batch samples
    estimates the trace.  ``probes`` overrides the seeded draw (one row per
    probe) and fixes the probe set explicitly.
    """
    if num_probes < 1:
        raise ValueError(f"num_probes must be >= 1, got {num_probes}")
    batch = Tensor(x.values if isinstance(x, Tensor) else x, requires_grad=True)
    if batch.ndim != 2:
        raise ValueError(f"expected a 2-d batch of rows, got shape {batch.shape}")
    n, width = batch.shape
    logits = discriminator(batch)
    if logits.size != n:
        raise ValueError(f"discriminator must emit one scalar per sample, got shape {logits.shape}")
    params = list(discriminator.params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnreachableGradientWarning)
        grad_field = backward(forward_op("sum_reduce", logits), batch,
                              retain_higher_order=True)
        if probes is None:
            rng = np.random.default_rng(seed)
            probes = rng.standard_normal((num_probes, width))
        else:
            probes = np.asarray(probes, dtype=np.float64)
            num_probes = probes.shape[0]

        per_sample = []
        for i in range(n):
            row = forward_op("slice_view", grad_field, start=(i, 0), size=(1, width))
            sqnorms = []
            for eps in probes:
                score = forward_op("sum_reduce", forward_op("mul", row, Tensor(eps[None, :])))
                grads = backward(score, params)
                sqnorms.append(math.fsum(float(np.sum(g.values ** 2)) for g in grads))
            per_sample.append(math.fsum(sqnorms) / num_probes)
    return math.fsum(per_sample) / n


# ---------------------------------------------------------------------------
# Embedding similarity
# ---------------------------------------------------------------------------

def mean_pairwise_cosine(embeddings: np.ndarray) -> CosineResult:
    """Mean cosine similarity over all unordered pairs of vectors.

    Pairs involving a zero vector are skipped and counted; at least two
    nonzero vectors are required.
    """
    vectors = np.asarray(embeddings, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] < 2:
        raise ValueError(f"expected >= 2 vectors as rows, got shape {vectors.shape}")
    n = vectors.shape[0]
    norms = np.linalg.norm(vectors, axis=1)
    nonzero = norms > 0.0
    kept = int(nonzero.sum())
    if kept < 2:
        raise ValueError("need at least 2 nonzero vectors")
    unit = vectors[nonzero] / norms[nonzero, None]
    sims = unit @ unit.T
    upper = sims[np.triu_indices(kept, k=1)]
    total_pairs = n * (n - 1) // 2
    return CosineResult(float(np.mean(upper)), total_pairs - upper.size)


# ---------------------------------------------------------------------------
# Loss-landscape slices
# ---------------------------------------------------------------------------

def _filter_normalized_direction(param: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random direction rescaled unit-by-unit to the parameter's norms."""
    direction = rng.standard_normal(param.shape)
    if param.ndim == 2:
        for col in range(param.shape[1]):
            scale = np.linalg.norm(param[:, col]) / (np.linalg.norm(direction[:, col]) + 1e-12)
            direction[:, col] *= scale
    else:
        direction *= np.linalg.norm(param) / (np.linalg.norm(direction) + 1e-12)
    return direction


def loss_slice(loss_fn, params: list[np.ndarray], directions=None, grid: int = 21,
               radius: float = 1.0, seed: int = 0) -> np.ndarray:
    """Loss evaluated on a 2-d lattice around the current parameters.

    ``loss_fn`` maps a list of parameter arrays to a float.  ``directions``
    is a pair of per-parameter direction lists; omitted, two random
    filter-normalized directions are drawn from ``seed``.  Cell (i, j)
    holds the loss at offsets (a_i, b_j) on an evenly spaced lattice over
    [-radius, radius]^2; non-finite losses are recorded as NaN.
    """
    if grid < 1:
        raise ValueError(f"grid must be >= 1, got {grid}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    params = [np.asarray(p, dtype=np.float64) for p in params]
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = tuple(
            [_filter_normalized_direction(p, rng) for p in params] for _ in range(2)
        )
    d1, d2 = directions
    offsets = np.linspace(-radius, radius, grid) if grid > 1 else np.zeros(1)
    values = np.empty((grid, grid))
    for i, a in enumerate(offsets):
        for j, b in enumerate(offsets):
            shifted = [p + a * u + b * v for p, u, v in zip(params, d1, d2)]
            loss = float(loss_fn(shifted))
            values[i, j] = loss if math.isfinite(loss) else math.nan
    return values
