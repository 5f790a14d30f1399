"""Multi-scale structural self-dissimilarity of gradient fields.

Coarse-grains a discriminator's input-gradient field along a
renormalization-style chain of block averages, scores the mismatch
between successive scales, and turns that score into a differentiable
training penalty plus the diagnostics needed to watch it work.
"""

from .tensor import (
    Graph,
    Tensor,
    UnreachableGradientWarning,
    backward,
    finite_diff_check,
    forward_op,
    no_grad,
    trace,
)
from .rg import (
    RGChain,
    SDProfile,
    build_chain,
    embed_square,
    gaussian_step,
    inner_product,
    kadanoff_step,
    ms3d,
    ms3d_penalty,
    normalize,
)
from .diagnostics import (
    AggregationResult,
    CosineResult,
    MetricRecord,
    aggregation_metric,
    fisher_trace,
    loss_slice,
    mean_pairwise_cosine,
)
from .gan import (
    GanModel,
    TrainConfig,
    TrainResult,
    build_gan,
    discriminator_loss,
    load_checkpoint,
    loss_ns,
    loss_variants,
    sample,
    save_checkpoint,
    train,
)
from .data import Dataset, load_image, make_synthetic

__version__ = "0.1.0"
