"""Coarse-graining chains and the multi-scale self-dissimilarity descriptor.

A gradient field is embedded into a square matrix, normalized to [0, 1],
and repeatedly coarse-grained: each step replaces blocks with their average
(or a Gaussian-smoothed subsample) and stores the result upsampled back to
the original side length.  The self-dissimilarity of one step is the mean
squared difference between the field and its coarse-grained version; the
multi-scale descriptor is the sum of those values along the whole chain.

Two routes compute the same numbers: plain numpy functions for diagnostics,
and :func:`ms3d_penalty`, which builds the chain out of differentiable
tensor ops on the discriminator's input gradient so the descriptor can be
minimized with respect to the discriminator weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, UnreachableGradientWarning, backward, forward_op

__all__ = [
    "FILTER_KINDS",
    "RGChain",
    "SDProfile",
    "build_chain",
    "embed_square",
    "gaussian_step",
    "inner_product",
    "kadanoff_step",
    "ms3d",
    "ms3d_penalty",
    "normalize",
]

FILTER_KINDS = ("kadanoff", "gaussian")


# ---------------------------------------------------------------------------
# Field construction
# ---------------------------------------------------------------------------

def _square_side(n_values: int, zeta: int) -> int:
    """Smallest power of ``zeta`` whose square holds ``n_values`` entries."""
    root = math.isqrt(n_values)
    if root * root < n_values:
        root += 1
    side = 1
    while side < root:
        side *= zeta
    return side


def embed_square(gradient_field: np.ndarray, zeta: int = 2) -> np.ndarray:
    """Flatten an h x w x c field row-major and zero-pad it into a square.

    The side length is ceil(sqrt(h*w*c)) rounded up to the next integer
    power of ``zeta`` so that every coarse-graining step tiles exactly.
    2-d inputs are treated as single-channel.
    """
    arr = np.asarray(gradient_field, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.size == 0:
        raise ValueError(f"embed_square: expected non-empty h x w x c input, got shape {arr.shape}")
    if zeta < 2:
        raise ValueError(f"embed_square: zeta must be >= 2, got {zeta}")
    flat = arr.ravel(order="C")
    side = _square_side(flat.size, zeta)
    padded = np.zeros(side * side)
    padded[: flat.size] = flat
    return padded.reshape(side, side)


def normalize(raw: np.ndarray) -> np.ndarray:
    """Map a field to [0, 1]: absolute values divided by the largest one.

    An all-zero field stays all-zero; the division is guarded.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("normalize: field contains non-finite entries")
    peak = np.max(np.abs(arr)) if arr.size else 0.0
    if peak == 0.0:
        return np.zeros_like(arr)
    return np.abs(arr) / peak


def _check_square(name: str, arr: np.ndarray) -> int:
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name}: expected a square 2-d field, got shape {arr.shape}")
    return arr.shape[0]


def _block_mean(arr: np.ndarray, zeta: int) -> np.ndarray:
    side = arr.shape[0]
    return arr.reshape(side // zeta, zeta, side // zeta, zeta).mean(axis=(1, 3))


def _upsample(arr: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(arr, factor, axis=0), factor, axis=1)


def kadanoff_step(field2d: np.ndarray, zeta: int) -> np.ndarray:
    """Replace each zeta x zeta block by its mean, upsampled back to size."""
    arr = np.asarray(field2d, dtype=np.float64)
    side = _check_square("kadanoff_step", arr)
    if zeta < 1 or side % zeta:
        raise ValueError(f"kadanoff_step: side {side} not divisible by zeta {zeta}")
    return _upsample(_block_mean(arr, zeta), zeta)


def gaussian_kernel3(sigma: float) -> np.ndarray:
    """Normalized 3x3 Gaussian kernel."""
    if sigma <= 0:
        raise ValueError(f"gaussian kernel: sigma must be positive, got {sigma}")
    axis = np.array([-1.0, 0.0, 1.0])
    one_d = np.exp(-(axis ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(one_d, one_d)
    return kernel / kernel.sum()


def _gaussian_smooth(arr: np.ndarray, sigma: float) -> np.ndarray:
    """3x3 Gaussian convolution with reflect padding, same output size."""
    kernel = gaussian_kernel3(sigma)
    padded = np.pad(arr, 1, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
    return np.einsum("ijkl,kl->ij", windows, kernel)


def gaussian_step(field2d: np.ndarray, zeta: int, sigma: float = 1.0) -> np.ndarray:
    """Gaussian-smooth, subsample by ``zeta``, upsample back to size."""
    arr = np.asarray(field2d, dtype=np.float64)
    side = _check_square("gaussian_step", arr)
    if sigma <= 0:
        raise ValueError(f"gaussian_step: sigma must be positive, got {sigma}")
    if zeta < 1 or side % zeta:
        raise ValueError(f"gaussian_step: side {side} not divisible by zeta {zeta}")
    if side < 2:
        raise ValueError("gaussian_step: side must be >= 2 for reflect padding")
    smoothed = _gaussian_smooth(arr, sigma)
    return _upsample(smoothed[::zeta, ::zeta], zeta)


# ---------------------------------------------------------------------------
# Chains and the descriptor
# ---------------------------------------------------------------------------

@dataclass
class RGChain:
    """Coarse-graining sequence, every entry stored at the original side."""

    fields: list[np.ndarray]
    zeta: int
    rg_filter: str
    t: int
    sigma: float = 1.0


@dataclass
class SDProfile:
    """Per-scale self-dissimilarity values and their sum."""

    per_scale: list[float]
    total: float = field(init=False)

    def __post_init__(self):
        self.total = float(sum(self.per_scale))


def chain_depth(side: int, zeta: int) -> int:
    """Number of coarse-graining steps: largest t with zeta**t <= side."""
    depth, power = 0, 1
    while power * zeta <= side:
        power *= zeta
        depth += 1
    return depth


def build_chain(field2d: np.ndarray, zeta: int = 2, rg_filter: str = "kadanoff",
                sigma: float = 1.0) -> RGChain:
    """Coarse-grain until blocks outgrow the field: zeta**(t+1) > side.

    The working field shrinks by ``zeta`` each step; stored entries are
    upsampled back to the original side, so step s of the stored sequence
    equals a block average (or Gaussian subsample) at block size
    ``zeta**(s+1)``.
    """
    arr = np.asarray(field2d, dtype=np.float64)
    side = _check_square("build_chain", arr)
    if rg_filter not in FILTER_KINDS:
        raise ValueError(f"build_chain: unknown filter {rg_filter!r}, expected one of {FILTER_KINDS}")
    if side < zeta:
        raise ValueError(f"build_chain: side {side} smaller than zeta {zeta}, no step possible")
    depth = chain_depth(side, zeta)
    if side % (zeta ** depth):
        raise ValueError(
            f"build_chain: side {side} is not divisible by zeta**t = {zeta ** depth}; "
            "embed_square produces compliant fields"
        )
    stored = [arr.copy()]
    working = arr
    for step in range(1, depth + 1):
        if rg_filter == "kadanoff":
            working = _block_mean(working, zeta)
        else:
            working = _gaussian_smooth(working, sigma)[::zeta, ::zeta]
        stored.append(_upsample(working, zeta ** step))
    return RGChain(stored, zeta, rg_filter, depth, sigma)


def sd_step(fine: np.ndarray, coarse: np.ndarray) -> float:
    """Self-dissimilarity of one chain step: mean squared difference."""
    fine = np.asarray(fine, dtype=np.float64)
    coarse = np.asarray(coarse, dtype=np.float64)
    if fine.shape != coarse.shape:
        raise ValueError(f"sd_step: resolution mismatch {fine.shape} vs {coarse.shape}")
    return float(np.mean((coarse - fine) ** 2))


def inner_product(a: np.ndarray, b: np.ndarray) -> float:
    """Overlap of two same-size fields: mean of the elementwise product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"inner_product: resolution mismatch {a.shape} vs {b.shape}")
    return float(np.mean(a * b))


def ms3d(field2d: np.ndarray, zeta: int = 2, rg_filter: str = "kadanoff",
         sigma: float = 1.0) -> SDProfile:
    """Self-dissimilarity at every scale of the chain, plus their sum."""
    chain = build_chain(field2d, zeta=zeta, rg_filter=rg_filter, sigma=sigma)
    per_scale = [sd_step(chain.fields[i], chain.fields[i + 1]) for i in range(chain.t)]
    return SDProfile(per_scale)


# ---------------------------------------------------------------------------
# Differentiable route
# ---------------------------------------------------------------------------

def _embed_tensor(row: Tensor, zeta: int) -> Tensor:
    flat = forward_op("reshape", row, shape=(row.size,))
    side = _square_side(row.size, zeta)
    pad = side * side - row.size
    if pad:
        flat = forward_op("pad_zero", flat, pad=((0, pad),))
    return forward_op("reshape", flat, shape=(side, side))


def _chain_tensor(field2d: Tensor, zeta: int, rg_filter: str, sigma: float) -> list[Tensor]:
    side = field2d.shape[0]
    if side < zeta:
        raise ValueError(f"side {side} smaller than zeta {zeta}, no coarse-graining step possible")
    depth = chain_depth(side, zeta)
    kernel = Tensor(gaussian_kernel3(sigma)) if rg_filter == "gaussian" else None
    stored = [field2d]
    working = field2d
    for step in range(1, depth + 1):
        if rg_filter == "kadanoff":
            working = forward_op("avg_pool2d", working, k=zeta, stride=zeta)
        else:
            padded = forward_op("pad_reflect1", working)
            smoothed = forward_op("conv2d", padded, kernel)
            working = forward_op("subsample2d", smoothed, step=zeta)
        stored.append(forward_op("upsample_nearest", working, factor=zeta ** step))
    return stored


def _sd_total_tensor(stored: list[Tensor]) -> Tensor:
    total = None
    for fine, coarse in zip(stored, stored[1:]):
        term = forward_op("mse", fine, coarse)
        total = term if total is None else forward_op("add", total, term)
    return total


def ms3d_penalty(x: Tensor, discriminator, zeta: int = 2, rg_filter: str = "kadanoff",
                 sigma: float = 1.0, peaks=None) -> Tensor:
    """Batch-mean multi-scale self-dissimilarity of the input-gradient field.

    ``x`` is a batch of flattened samples, one per row; ``discriminator``
    maps it to one logit per sample.  The gradient of each logit with
    respect to its input row is embedded, normalized (the normalizing max
    is held constant during differentiation), coarse-grained, and scored.
    The returned scalar is differentiable with respect to the
    discriminator's parameters via double backprop.

    ``peaks`` pins the per-sample normalization constants instead of
    reading them off the gradient field; since they never carry gradient,
    pinning them makes the scalar a smooth function of the weights, which
    is what a finite-difference oracle must difference.
    """
    if rg_filter not in FILTER_KINDS:
        raise ValueError(f"ms3d_penalty: unknown filter {rg_filter!r}, expected one of {FILTER_KINDS}")
    leaf = Tensor(x.values, requires_grad=True)
    if leaf.ndim != 2:
        raise ValueError(f"ms3d_penalty: expected a 2-d batch of rows, got shape {leaf.shape}")
    n = leaf.shape[0]
    logits = discriminator(leaf)
    if logits.size != n:
        raise ValueError(
            f"ms3d_penalty: discriminator must emit one scalar per sample, "
            f"got shape {logits.shape} for batch of {n}"
        )
    if peaks is not None and len(peaks) != n:
        raise ValueError(f"ms3d_penalty: got {len(peaks)} peaks for a batch of {n}")
    with warnings.catch_warnings():
        # a constant discriminator legitimately has a zero gradient field
        warnings.simplefilter("ignore", UnreachableGradientWarning)
        grad_field = backward(forward_op("sum_reduce", logits), leaf, retain_higher_order=True)

    total = None
    width = leaf.shape[1]
    for i in range(n):
        row = forward_op("slice_view", grad_field, start=(i, 0), size=(1, width))
        peak = float(np.max(np.abs(row.values))) if peaks is None else float(peaks[i])
        square = _embed_tensor(row, zeta)
        magnitude = forward_op("abs", square)
        # normalization peak is a constant of the graph, never a node
        scale = 1.0 / peak if peak > 0.0 else 0.0
        normalized = forward_op("mul", magnitude, Tensor(scale))
        stored = _chain_tensor(normalized, zeta, rg_filter, sigma)
        sample_total = _sd_total_tensor(stored)
        total = sample_total if total is None else forward_op("add", total, sample_total)
    return forward_op("mul", total, Tensor(1.0 / n))
