"""Command-line surface: descriptor reports, training runs, analysis dumps.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  All outputs are
plain CSV/JSON with '.' decimal points regardless of locale.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .data import (
    load_image,
    make_synthetic,
    read_field_dump,
    write_csv_array,
    write_png_gray,
)
from .diagnostics import MetricRecord, aggregation_metric, fisher_trace, loss_slice
from .gan import (
    TrainConfig,
    discriminator_loss,
    gradient_fields,
    initial_model,
    load_checkpoint,
    sample,
    save_checkpoint,
    train,
)
from .rg import FILTER_KINDS, embed_square, ms3d, normalize
from .tensor import Tensor, no_grad

__all__ = ["main", "cmd_ms3d", "cmd_train", "cmd_analyze", "cmd_landscape", "parse_config"]

JSON_SCHEMA = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

_CONFIG_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw: str):
    kind = _CONFIG_TYPES[key]
    raw = raw.strip().strip('"').strip("'")
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(path) -> TrainConfig:
    """Read a key = value config file into a TrainConfig.

    Lines starting with '#' and blank lines are ignored; unknown keys are
    rejected by name.
    """
    settings = {}
    unknown = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _CONFIG_TYPES:
            unknown.append(key)
            continue
        settings[key] = _coerce(key, raw)
    if unknown:
        raise UsageError(f"{path}: unknown config keys: {', '.join(sorted(unknown))}")
    config = TrainConfig(**settings)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return config


def _show_config(config: TrainConfig):
    for key, value in asdict(config).items():
        print(f"{key} = {value}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_ms3d(args) -> int:
    """Descriptor report for a single image."""
    image = load_image(args.image, args.format)
    field2d = normalize(embed_square(image, args.zeta))
    profile = ms3d(field2d, zeta=args.zeta, rg_filter=args.filter, sigma=args.sigma)
    if args.json:
        report = {
            "schema": JSON_SCHEMA,
            "image": str(args.image),
            "zeta": args.zeta,
            "filter": args.filter,
            "per_scale": profile.per_scale,
            "total": profile.total,
        }
        print(json.dumps(report))
    else:
        for i, value in enumerate(profile.per_scale):
            print(f"scale {i}->{i + 1}: {value!r}")
        print(f"total: {profile.total!r}")
    return 0


def _dataset_from_config(config: TrainConfig):
    data_seed = config.seed if config.data_seed < 0 else config.data_seed
    return make_synthetic(config.data_family, config.data_n, config.image_size, data_seed)


def _sample_grid(model, n_side: int, seed: int) -> np.ndarray:
    batch = sample(model, n_side * n_side, seed)
    h, w = batch.shape[1:3]
    grid = batch[..., 0].reshape(n_side, n_side, h, w).transpose(0, 2, 1, 3)
    grid = grid.reshape(n_side * h, n_side * w)
    return np.clip((grid + 1.0) * 127.5, 0.0, 255.0).astype(np.uint8)


def cmd_train(args) -> int:
    """Run a training experiment, writing metrics CSV and checkpoints."""
    config = parse_config(args.config) if args.config else TrainConfig()
    if args.steps is not None:
        config.steps = args.steps
    if args.seed is not None:
        config.seed = args.seed
    config.validate()
    if args.show_config:
        _show_config(config)
        return 0
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = _dataset_from_config(config)

    csv_path = out_dir / "metrics.csv"
    save_checkpoint(out_dir / "checkpoint_initial.npz", initial_model(config), 0, config)
    with open(csv_path, "w", newline="") as handle:
        handle.write(MetricRecord.CSV_HEADER + "\n")

        def sink(record):
            handle.write(record.csv_row() + "\n")

        def checkpoint_hook(step, model):
            save_checkpoint(out_dir / f"checkpoint_step{step}.npz", model, step, config)

        result = train(config, dataset, sinks=(sink,), checkpoint_hook=checkpoint_hook)
    save_checkpoint(out_dir / "checkpoint_final.npz", result.model, config.steps, config)
    write_png_gray(out_dir / "samples.png", _sample_grid(result.model, 4, config.seed))
    if result.diverged:
        print(f"run diverged at step {result.halted_step}; partial logs in {csv_path}",
              file=sys.stderr)
        return 2
    print(f"wrote {csv_path} ({len(result.records)} records)")
    return 0


def _analysis_rows(args, model):
    dataset = make_synthetic(args.data_family, args.data_n, model.image_shape[0],
                             args.data_seed)
    picked = dataset.images[dataset.train_idx][: args.samples]
    return picked.reshape(picked.shape[0], -1)


def _analysis_fields(args):
    """Yield (name, normalized field) pairs from a dump or a checkpoint."""
    if args.dump:
        path = Path(args.dump)
        raw = (read_field_dump(path) if path.suffix == ".f64"
               else np.loadtxt(path, delimiter=",", ndmin=2))
        yield path.name, normalize(raw)
        return
    model, _ = load_checkpoint(args.checkpoint)
    rows = _analysis_rows(args, model)
    for i, row in enumerate(gradient_fields(model.discriminator, rows)):
        yield f"sample{i}", normalize(embed_square(row.reshape(model.image_shape), args.zeta))


def cmd_analyze(args) -> int:
    """Aggregation (and, with a checkpoint, Fisher-trace) report."""
    if bool(args.dump) == bool(args.checkpoint):
        raise UsageError("provide exactly one of --dump or --checkpoint")
    rows = []
    for name, field2d in _analysis_fields(args):
        agg = aggregation_metric(field2d, args.tau, args.connectivity)
        print(f"{name}: n_agg={agg.n_agg} r_agg={agg.r_agg!r}")
        rows.append((name, agg))
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
        batch = _analysis_rows(args, model)
        fisher = fisher_trace(Tensor(batch), model.discriminator,
                              num_probes=args.probes, seed=args.seed)
        print(f"fisher_trace: {fisher!r}")
    if args.csv:
        with open(args.csv, "w", newline="") as handle:
            handle.write("name,n_agg,r_agg\n")
            for name, agg in rows:
                handle.write(f"{name},{agg.n_agg},{agg.r_agg!r}\n")
    return 0


def cmd_landscape(args) -> int:
    """Two-direction slice of the discriminator loss around a checkpoint."""
    model, meta = load_checkpoint(args.checkpoint)
    config = TrainConfig(**meta["config"]) if "config" in meta else TrainConfig()
    rows = _analysis_rows(args, model)
    fake = sample(model, rows.shape[0], args.seed).reshape(rows.shape[0], -1)
    disc = model.discriminator
    originals = [p.values.copy() for p in disc.params]

    def loss_at(arrays):
        disc.set_params(arrays)
        value = float(discriminator_loss(model, rows, fake, config).values)
        return value

    try:
        grid = loss_slice(loss_at, originals, grid=args.grid, radius=args.radius,
                          seed=args.seed)
    finally:
        disc.set_params(originals)
    write_csv_array(args.out, grid)
    print(f"wrote {args.out} ({args.grid}x{args.grid} grid, radius {args.radius})")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="ms3d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("descriptor", help="multi-scale self-dissimilarity of an image")
    p.add_argument("image", help="input image (pgm, png or csv)")
    p.add_argument("--zeta", type=int, default=2)
    p.add_argument("--filter", choices=FILTER_KINDS, default="kadanoff")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--format", choices=("pgm", "png", "csv"), default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ms3d)

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("config", nargs="?", default=None, help="key = value config file")
    p.add_argument("--out", default="run")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--show-config", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="aggregation / Fisher report")
    p.add_argument("--dump", default=None, help="gradient-field dump (.csv or .f64)")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--zeta", type=int, default=2)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-family", default="gauss-blobs")
    p.add_argument("--data-n", type=int, default=56)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("landscape", help="loss grid around a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out", default="landscape.csv")
    p.add_argument("--grid", type=int, default=21)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--data-family", default="gauss-blobs")
    p.add_argument("--data-n", type=int, default=56)
    p.add_argument("--data-seed", type=int, default=0)
    p.set_defaults(func=cmd_landscape)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
