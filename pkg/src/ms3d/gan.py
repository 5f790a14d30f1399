"""Toy dense GAN with a self-dissimilarity penalty on the discriminator.

Models are small fully connected nets built on the tensor engine so the
penalty (a function of the discriminator's input gradient) stays twice
differentiable.  The trainer alternates discriminator and generator steps,
logs diagnostics at a fixed cadence, and is bit-deterministic under fixed
seeds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .tensor import Tensor, backward, forward_op, no_grad
from .rg import FILTER_KINDS, embed_square, ms3d, ms3d_penalty, normalize
from .diagnostics import MetricRecord, aggregation_metric, fisher_trace, mean_pairwise_cosine

__all__ = [
    "Dense",
    "MLP",
    "GanModel",
    "TrainConfig",
    "TrainResult",
    "Adam",
    "SGD",
    "build_gan",
    "discriminator_loss",
    "load_checkpoint",
    "loss_ns",
    "loss_variants",
    "sample",
    "save_checkpoint",
    "train",
]

LOSS_KINDS = ("ns", "wasserstein", "ls", "hinge", "rahinge")
APPLY_TO = ("real", "fake", "both")


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class Dense:
    """Fully connected layer y = x @ W + b."""

    def __init__(self, w: np.ndarray, b: np.ndarray | None):
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(b, requires_grad=True) if b is not None else None

    @property
    def params(self) -> list[Tensor]:
        return [self.w] if self.b is None else [self.w, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        out = forward_op("matmul", x, self.w)
        if self.b is not None:
            out = forward_op("add", out, self.b)
        return out


def _activate(kind: str, x: Tensor) -> Tensor:
    if kind in ("softplus", "tanh", "sigmoid"):
        return forward_op(kind, x)
    if kind == "leaky_relu":
        return forward_op("leaky_relu", x, alpha=0.2)
    raise ValueError(f"unknown activation {kind!r}")


class MLP:
    """Stack of dense layers with an activation between them.

    ``out_activation`` is applied to the final layer's output (or not,
    for a raw logit head).
    """

    def __init__(self, sizes: list[int], activation: str = "softplus",
                 out_activation: str | None = None, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.sizes = list(sizes)
        self.activation = activation
        self.out_activation = out_activation
        self.bias = bias
        self.layers = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            w = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
            b = np.zeros((1, fan_out)) if bias else None
            self.layers.append(Dense(w, b))

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params]

    def set_params(self, arrays: list[np.ndarray]):
        own = self.params
        if len(own) != len(arrays):
            raise ValueError(f"expected {len(own)} parameter arrays, got {len(arrays)}")
        for p, arr in zip(own, arrays):
            if p.values.shape != arr.shape:
                raise ValueError(f"parameter shape mismatch {p.values.shape} vs {arr.shape}")
            p.values = np.asarray(arr, dtype=np.float64).copy()

    def embed(self, x: Tensor) -> Tensor:
        """Activations entering the final layer."""
        for layer in self.layers[:-1]:
            x = _activate(self.activation, layer(x))
        return x

    def __call__(self, x: Tensor) -> Tensor:
        out = self.layers[-1](self.embed(x)) if len(self.layers) else x
        if self.out_activation:
            out = _activate(self.out_activation, out)
        return out


@dataclass
class GanModel:
    """Generator/discriminator pair plus the shapes needed to drive them."""

    generator: MLP
    discriminator: MLP
    image_shape: tuple[int, int, int]
    latent_dim: int

    @property
    def image_dim(self) -> int:
        h, w, c = self.image_shape
        return h * w * c

    def arch(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "latent_dim": self.latent_dim,
            "g_sizes": self.generator.sizes,
            "d_sizes": self.discriminator.sizes,
            "g_activation": self.generator.activation,
            "d_activation": self.discriminator.activation,
            "d_bias": self.discriminator.bias,
        }


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Run configuration; field names double as config-file keys."""

    penalty_weight: float = 10.0      # lambda in the regularized loss
    zeta: int = 2
    rg_filter: str = "kadanoff"
    gaussian_sigma: float = 1.0
    loss_kind: str = "ns"
    apply_to: str = "real"
    data_family: str = "gauss-blobs"
    data_n: int = 56
    data_seed: int = -1               # -1: derive from seed
    image_size: int = 16
    steps: int = 2000
    batch_size: int = 16
    latent_dim: int = 32
    g_hidden: int = 128
    d_hidden: int = 64
    optimizer: str = "adam"
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.99
    seed: int = 0
    metric_cadence: int = 50
    metric_eval_n: int = 8
    metric_fake_n: int = 32
    fisher_probes: int = 8
    agg_tau: float = 0.2
    agg_connectivity: int = 8
    d_steps_per_g: int = 1
    checkpoint_cadence: int = 0       # 0: initial and final checkpoints only
    penalty_enabled: bool = True      # code-path switch, independent of the weight

    def validate(self):
        if self.penalty_weight < 0:
            raise ValueError(f"penalty_weight must be >= 0, got {self.penalty_weight}")
        if self.zeta not in (2, 3, 4):
            raise ValueError(f"zeta must be one of 2, 3, 4, got {self.zeta}")
        if self.rg_filter not in FILTER_KINDS:
            raise ValueError(f"rg_filter must be one of {FILTER_KINDS}, got {self.rg_filter!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.apply_to not in APPLY_TO:
            raise ValueError(f"apply_to must be one of {APPLY_TO}, got {self.apply_to!r}")
        if self.image_size not in (16, 32):
            raise ValueError(f"image_size must be 16 or 32, got {self.image_size}")
        if self.data_n < self.batch_size:
            raise ValueError(f"data_n {self.data_n} smaller than batch_size {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.steps < 0 or self.batch_size < 1 or self.metric_cadence < 1:
            raise ValueError("steps, batch_size and metric_cadence must be sensible")
        if self.d_steps_per_g < 1:
            raise ValueError(f"d_steps_per_g must be >= 1, got {self.d_steps_per_g}")
        return self


def build_gan(config: TrainConfig, rng: np.random.Generator) -> GanModel:
    d = config.image_size * config.image_size
    generator = MLP([config.latent_dim, config.g_hidden, d],
                    activation="tanh", out_activation="tanh", rng=rng)
    discriminator = MLP([d, config.d_hidden, 1], activation="softplus", rng=rng)
    return GanModel(generator, discriminator,
                    (config.image_size, config.image_size, 1), config.latent_dim)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _relu(x: Tensor) -> Tensor:
    return forward_op("leaky_relu", x, alpha=0.0)


def _mean(x: Tensor) -> Tensor:
    return forward_op("mean_reduce", x)


def loss_ns(real_logits: Tensor, fake_logits: Tensor) -> tuple[Tensor, Tensor]:
    """Non-saturating GAN loss in stable softplus form.

    d = E softplus(-real) + E softplus(fake);  g = E softplus(-fake).
    """
    d_loss = forward_op("add",
                        _mean(forward_op("softplus", forward_op("neg", real_logits))),
                        _mean(forward_op("softplus", fake_logits)))
    g_loss = _mean(forward_op("softplus", forward_op("neg", fake_logits)))
    return d_loss, g_loss


def loss_variants(kind: str, real_logits: Tensor, fake_logits: Tensor) -> tuple[Tensor, Tensor]:
    """Alternative divergence measures: wasserstein, ls, hinge, rahinge."""
    if kind == "wasserstein":
        d_loss = forward_op("sub", _mean(fake_logits), _mean(real_logits))
        g_loss = forward_op("neg", _mean(fake_logits))
    elif kind == "ls":
        half = Tensor(0.5)
        d_loss = forward_op("add",
                            forward_op("mul", half, _mean(forward_op("square", forward_op("sub", real_logits, Tensor(1.0))))),
                            forward_op("mul", half, _mean(forward_op("square", fake_logits))))
        g_loss = forward_op("mul", half, _mean(forward_op("square", forward_op("sub", fake_logits, Tensor(1.0)))))
    elif kind == "hinge":
        d_loss = forward_op("add",
                            _mean(_relu(forward_op("sub", Tensor(1.0), real_logits))),
                            _mean(_relu(forward_op("add", Tensor(1.0), fake_logits))))
        g_loss = forward_op("neg", _mean(fake_logits))
    elif kind == "rahinge":
        real_dev = forward_op("sub", real_logits, _mean(fake_logits))
        fake_dev = forward_op("sub", fake_logits, _mean(real_logits))
        d_loss = forward_op("add",
                            _mean(_relu(forward_op("sub", Tensor(1.0), real_dev))),
                            _mean(_relu(forward_op("add", Tensor(1.0), fake_dev))))
        g_loss = forward_op("add",
                            _mean(_relu(forward_op("sub", Tensor(1.0), fake_dev))),
                            _mean(_relu(forward_op("add", Tensor(1.0), real_dev))))
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return d_loss, g_loss


def gan_losses(kind: str, real_logits: Tensor, fake_logits: Tensor) -> tuple[Tensor, Tensor]:
    if kind == "ns":
        return loss_ns(real_logits, fake_logits)
    return loss_variants(kind, real_logits, fake_logits)


def discriminator_loss(model: GanModel, real_x, fake_x, config: TrainConfig) -> Tensor:
    """Base discriminator loss plus the weighted self-dissimilarity penalty."""
    config.validate()
    real_t = real_x if isinstance(real_x, Tensor) else Tensor(real_x)
    fake_t = fake_x if isinstance(fake_x, Tensor) else Tensor(fake_x)
    disc = model.discriminator
    d_loss, _ = gan_losses(config.loss_kind, disc(real_t), disc(fake_t))
    if config.penalty_enabled and config.penalty_weight > 0.0:
        pools = {"real": [real_t], "fake": [fake_t], "both": [real_t, fake_t]}[config.apply_to]
        penalty = None
        for pool in pools:
            term = ms3d_penalty(pool, disc, zeta=config.zeta,
                                rg_filter=config.rg_filter, sigma=config.gaussian_sigma)
            penalty = term if penalty is None else forward_op("add", penalty, term)
        penalty = forward_op("mul", penalty, Tensor(1.0 / len(pools)))
        d_loss = forward_op("add", d_loss, forward_op("mul", Tensor(config.penalty_weight), penalty))
    return d_loss


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class SGD:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: list[Tensor]):
        for p, g in zip(self.params, grads):
            p.values = p.values - self.lr * g.values


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.0,
                 beta2: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]
        self.t = 0

    def step(self, grads: list[Tensor]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g.values
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g.values ** 2
            m_hat = self.m[i] / (1.0 - b1 ** self.t)
            v_hat = self.v[i] / (1.0 - b2 ** self.t)
            p.values = p.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _make_optimizer(config: TrainConfig, params: list[Tensor], lr: float):
    if config.optimizer == "sgd":
        return SGD(params, lr)
    return Adam(params, lr, config.beta1, config.beta2)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: GanModel
    records: list[MetricRecord] = field(default_factory=list)
    diverged: bool = False
    halted_step: int | None = None


def _rows(images: np.ndarray) -> np.ndarray:
    return images.reshape(images.shape[0], -1)


def _seed_streams(seed: int) -> tuple[int, int, int, int]:
    seq = np.random.SeedSequence(seed)
    return tuple(int(s.generate_state(1)[0]) for s in seq.spawn(4))


def initial_model(config: TrainConfig) -> GanModel:
    """The model exactly as ``train`` initializes it for this config."""
    init_seed = _seed_streams(config.seed)[0]
    return build_gan(config, np.random.default_rng(init_seed))


def gradient_fields(disc: MLP, rows: np.ndarray) -> np.ndarray:
    """Input gradients of the summed logits, one field per row."""
    leaf = Tensor(rows, requires_grad=True)
    logits = disc(leaf)
    return backward(forward_op("sum_reduce", logits), leaf).values


def _collect_metrics(step: int, model: GanModel, config: TrainConfig,
                     train_rows, val_rows, metric_z, fisher_seed: int) -> MetricRecord:
    disc, gen = model.discriminator, model.generator
    eval_rows = train_rows[: min(64, len(train_rows))]
    with no_grad():
        d_train = float(np.mean(disc(Tensor(eval_rows)).values))
        d_val = float(np.mean(disc(Tensor(val_rows)).values))
        fake_rows = gen(Tensor(metric_z)).values
        d_fake = float(np.mean(disc(Tensor(fake_rows)).values))
        embeddings = disc.embed(Tensor(eval_rows)).values
    cosine = mean_pairwise_cosine(embeddings).value

    field_rows = train_rows[: config.metric_eval_n]
    grads = gradient_fields(disc, field_rows)
    r_aggs, totals = [], []
    for row in grads:
        field2d = normalize(embed_square(row.reshape(model.image_shape), config.zeta))
        r_aggs.append(aggregation_metric(field2d, config.agg_tau, config.agg_connectivity).r_agg)
        totals.append(ms3d(field2d, config.zeta, config.rg_filter, config.gaussian_sigma).total)
    fisher = fisher_trace(Tensor(field_rows), disc, num_probes=config.fisher_probes,
                          seed=fisher_seed)
    return MetricRecord(step, d_train, d_val, d_fake,
                        float(np.mean(r_aggs)), float(np.mean(totals)), fisher, cosine)


def train(config: TrainConfig, dataset, sinks=(), checkpoint_hook=None) -> TrainResult:
    """Alternating GAN training with metric records at a fixed cadence.

    ``sinks`` are callables fed each MetricRecord as it is produced;
    ``checkpoint_hook(step, model)`` fires every ``checkpoint_cadence``
    steps when that cadence is nonzero.  A non-finite loss halts the run,
    marks the result diverged, and leaves the records collected so far
    intact.
    """
    config.validate()
    init_seed, order_seed, latent_seed, metric_seed = _seed_streams(config.seed)
    model = build_gan(config, np.random.default_rng(init_seed))
    disc, gen = model.discriminator, model.generator
    opt_d = _make_optimizer(config, disc.params, config.lr_d)
    opt_g = _make_optimizer(config, gen.params, config.lr_g)

    order_rng = np.random.default_rng(order_seed)
    latent_rng = np.random.default_rng(latent_seed)
    metric_rng = np.random.default_rng(metric_seed)

    train_rows = _rows(dataset.images[dataset.train_idx])
    val_rows = _rows(dataset.images[dataset.val_idx])
    metric_z = metric_rng.standard_normal((config.metric_fake_n, config.latent_dim))
    fisher_seed_base = int(metric_rng.integers(0, 2 ** 31))

    result = TrainResult(model)
    n_train = len(train_rows)
    for step in range(config.steps):
        # discriminator step(s)
        diverged = False
        for _ in range(config.d_steps_per_g):
            idx = order_rng.integers(0, n_train, config.batch_size)
            real = train_rows[idx]
            z = latent_rng.standard_normal((config.batch_size, config.latent_dim))
            with no_grad():
                fake = gen(Tensor(z)).values
            d_loss = discriminator_loss(model, real, fake, config)
            if not np.isfinite(d_loss.values):
                diverged = True
                break
            opt_d.step(backward(d_loss, disc.params))
        if not diverged:
            # generator step
            z = latent_rng.standard_normal((config.batch_size, config.latent_dim))
            fake_t = gen(Tensor(z))
            _, g_loss = gan_losses(config.loss_kind, disc(Tensor(real)), disc(fake_t))
            if not np.isfinite(g_loss.values):
                diverged = True
            else:
                opt_g.step(backward(g_loss, gen.params))
        if diverged:
            result.diverged = True
            result.halted_step = step
            record = MetricRecord(step, math.nan, math.nan, math.nan,
                                  math.nan, math.nan, math.nan, math.nan)
            result.records.append(record)
            for sink in sinks:
                sink(record)
            break
        if (step + 1) % config.metric_cadence == 0:
            record = _collect_metrics(step + 1, model, config, train_rows, val_rows,
                                      metric_z, fisher_seed_base + step + 1)
            result.records.append(record)
            for sink in sinks:
                sink(record)
        if checkpoint_hook and config.checkpoint_cadence \
                and (step + 1) % config.checkpoint_cadence == 0:
            checkpoint_hook(step + 1, model)
    return result


def sample(model: GanModel, n: int, seed: int = 0) -> np.ndarray:
    """Seeded generator outputs as an (n, h, w, c) batch in [-1, 1]."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    z = np.random.default_rng(seed).standard_normal((n, model.latent_dim))
    with no_grad():
        rows = model.generator(Tensor(z)).values
    return rows.reshape((n,) + model.image_shape)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = 1


def save_checkpoint(path, model: GanModel, step: int = 0, config: TrainConfig | None = None):
    """All parameter arrays plus architecture metadata, bit-exact round trip."""
    arrays = {}
    for tag, net in (("g", model.generator), ("d", model.discriminator)):
        for i, p in enumerate(net.params):
            arrays[f"{tag}_{i}"] = p.values
    meta = {"format": CHECKPOINT_FORMAT, "step": step, "arch": model.arch()}
    if config is not None:
        meta["config"] = asdict(config)
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[GanModel, dict]:
    with np.load(path, allow_pickle=False) as bundle:
        meta = json.loads(str(bundle["__meta__"][()]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
        arch = meta["arch"]
        generator = MLP(arch["g_sizes"], activation=arch["g_activation"], out_activation="tanh")
        discriminator = MLP(arch["d_sizes"], activation=arch["d_activation"], bias=arch["d_bias"])
        generator.set_params([bundle[f"g_{i}"] for i in range(len(generator.params))])
        discriminator.set_params([bundle[f"d_{i}"] for i in range(len(discriminator.params))])
    model = GanModel(generator, discriminator, tuple(arch["image_shape"]), arch["latent_dim"])
    return model, meta
