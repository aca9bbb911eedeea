"""Command-line interface: campaigns, sweeps, optimizer benchmarks, protocol checks.

Model sources are URIs: ``builtin:linear`` (analytic toy with a margin the
default epsilon always beats), ``builtin:mlp`` (blob dataset + trained toy
MLP), ``file:<path>`` (serialized model), ``http://<endpoint>`` (remote
server).  Machine-readable output goes to CSV files under --out; stdout is a
human summary.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .campaign import CampaignConfig, export_results, read_config_file, run_campaign, tile_sweep
from .dfo import OptimizerKind, minimize
from .errors import DfoAttackError
from .models import (
    LabeledImage,
    LinearModel,
    ModelOracle,
    RemoteModel,
    load_model,
    predicted_class,
    synthetic_blob_dataset,
    train_toy_mlp,
)
from .objectives import ProblemForm
from .tensor_core import ImageTensor, LossKind

DEFAULT_EPS = 0.05
DEFAULT_TILES = 50
DEFAULT_BUDGET_UNTARGETED = 10_000
DEFAULT_BUDGET_TARGETED = 100_000


@dataclass
class Command:
    name: str
    args: argparse.Namespace


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _float_list(text: str) -> list[float]:
    return [_positive_float(part) for part in text.split(",") if part]


def _int_list(text: str) -> list[int]:
    return [_positive_int(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfoattack",
        description="Derivative-free black-box attacks on logits-only classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    attack = sub.add_parser("attack", help="run an attack campaign")
    attack.add_argument("--model", required=True,
                        help="builtin:linear | builtin:mlp | file:<path> | http://<endpoint>")
    attack.add_argument("--config", help="key=value file mirroring the campaign config")
    attack.add_argument("--eps", type=_positive_float, default=None)
    attack.add_argument("--tiles", type=_positive_int, default=None)
    attack.add_argument("--budget", type=_positive_int, default=None)
    attack.add_argument("--optimizer", choices=[k.value for k in OptimizerKind], default=None)
    attack.add_argument("--form", choices=[f.value for f in ProblemForm], default=None)
    attack.add_argument("--mode", choices=["untargeted", "targeted"], default=None)
    attack.add_argument("--loss", choices=[l.value for l in LossKind], default=None)
    attack.add_argument("--seed", type=int, default=None)
    attack.add_argument("--workers", type=_positive_int, default=None)
    attack.add_argument("--images", type=_positive_int, default=None,
                        help="how many images to attack (default 20)")
    attack.add_argument("--out", default="out", help="directory for the CSV outputs")
    attack.add_argument("--timing", action="store_true",
                        help="record wall-clock times in results.csv (breaks byte-reproducibility)")

    sweep = sub.add_parser("sweep", help="single-shot tiled-noise success-rate sweep")
    sweep.add_argument("--model", required=True)
    sweep.add_argument("--eps", type=_float_list, default=[0.01, 0.03, 0.05, 0.1],
                       help="comma-separated noise intensities")
    sweep.add_argument("--tiles", type=_int_list, default=[1, 2, 4, 8, 16],
                       help="comma-separated tile counts per side")
    sweep.add_argument("--images", type=_positive_int, default=50)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out", default="out")

    bench = sub.add_parser("bench", help="optimizer benchmark on a test function")
    bench.add_argument("--optimizer", choices=[k.value for k in OptimizerKind], required=True)
    bench.add_argument("--dim", type=_positive_int, required=True)
    bench.add_argument("--budget", type=_positive_int, required=True)
    bench.add_argument("--function", choices=sorted(BENCH_FUNCTIONS), default="sphere")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default=None, help="write an eval,best,sigma trace here")

    check = sub.add_parser("check-server", help="probe a model server's protocol")
    check.add_argument("endpoint")
    return parser


def parse_args(argv) -> Command:
    args = build_parser().parse_args(argv)
    return Command(args.command, args)


# ----------------------------------------------------------- model sources

def _builtin_linear(seed: int, count: int) -> tuple[ModelOracle, list[LabeledImage]]:
    """2-class toy whose margin (<= 1.28) is far below the reachable tiled
    push of 64 * 0.05 at the default epsilon, so every image is foolable."""
    shape = (1, 8, 8)
    model = LinearModel(np.vstack([np.ones(64), np.zeros(64)]),
                        np.array([-32.0, 0.0]), shape)
    rng = np.random.default_rng(seed)
    images = []
    for i in range(count):
        pixels = 0.5 + rng.uniform(-0.02, 0.02, size=shape)
        image = ImageTensor(pixels)
        images.append(LabeledImage(i, image, predicted_class(model, image)))
    return model, images


def _builtin_mlp(seed: int, count: int) -> tuple[ModelOracle, list[LabeledImage]]:
    rng = np.random.default_rng(seed)
    per_class = max(1, -(-count // 4))  # ceil
    data = synthetic_blob_dataset(per_class, (3, 16, 16), 4, separation=0.15, rng=rng)
    model = train_toy_mlp(data, rng=np.random.default_rng(seed))
    return model, data[:count]


def _labeled_by_prediction(model: ModelOracle, seed: int, count: int) -> list[LabeledImage]:
    # External models know nothing about our labels; attack their own
    # prediction on blob-like probe images instead.
    rng = np.random.default_rng(seed)
    classes = max(2, min(model.num_classes, 8))
    data = synthetic_blob_dataset(max(1, -(-count // classes)), model.input_shape,
                                  classes, separation=0.15, rng=rng)
    return [LabeledImage(item.image_id, item.image, predicted_class(model, item.image))
            for item in data[:count]]


def resolve_model(source: str, seed: int, count: int
                  ) -> tuple[ModelOracle, list[LabeledImage]]:
    if source == "builtin:linear":
        return _builtin_linear(seed, count)
    if source == "builtin:mlp":
        return _builtin_mlp(seed, count)
    if source.startswith("file:"):
        model = load_model(source[len("file:"):])
        return model, _labeled_by_prediction(model, seed, count)
    if source.startswith(("http://", "https://")):
        model = RemoteModel(source)
        return model, _labeled_by_prediction(model, seed, count)
    raise DfoAttackError(f"unknown model source {source!r}")


# ------------------------------------------------------------- subcommands

def _attack_config(args) -> CampaignConfig:
    values = read_config_file(args.config) if args.config else {}
    overrides = {
        "epsilon": args.eps,
        "n_tiles": args.tiles,
        "query_limit": args.budget,
        "optimizer": OptimizerKind(args.optimizer) if args.optimizer else None,
        "form": ProblemForm(args.form) if args.form else None,
        "mode": args.mode,
        "loss": LossKind(args.loss) if args.loss else None,
        "seed": args.seed,
        "workers": args.workers,
        "image_count": args.images,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "query_limit" not in values:
        targeted = values.get("mode") == "targeted"
        values["query_limit"] = DEFAULT_BUDGET_TARGETED if targeted else DEFAULT_BUDGET_UNTARGETED
    values.setdefault("epsilon", DEFAULT_EPS)
    values.setdefault("n_tiles", DEFAULT_TILES)
    values.setdefault("image_count", 20)
    return CampaignConfig(**values)


def _run_attack(args) -> int:
    config = _attack_config(args)
    model, images = resolve_model(args.model, config.seed, config.image_count)
    side = min(model.input_shape[1], model.input_shape[2])
    if config.n_tiles > side:
        print(f"note: capping n_tiles at the image side ({side})")
        config = CampaignConfig(**{**config.__dict__, "n_tiles": side})
    stats = run_campaign(config, images, model)
    paths = export_results(stats, args.out, include_timing=args.timing)
    rate = "n/a" if stats.success_rate is None else f"{stats.success_rate:.1%}"
    print(f"attacked {stats.n_images} images ({stats.n_initially_correct} initially correct)")
    print(f"success rate: {rate}")
    if stats.median_queries is not None:
        print(f"queries (successful): median {stats.median_queries:.0f}, "
              f"average {stats.average_queries:.1f}")
    print(f"wrote {paths['results']}, {paths['cumulative']}, {paths['summary']}")
    return 0


def _run_sweep(args) -> int:
    model, images = resolve_model(args.model, args.seed, args.images)
    side = min(model.input_shape[1], model.input_shape[2])
    tiles = [t for t in args.tiles if t <= side]
    if not tiles:
        raise DfoAttackError(f"no tile counts fit an image side of {side}")
    matrix = tile_sweep(model, images, args.eps, tiles, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "n_tiles", "success_rate"])
        for i, eps in enumerate(args.eps):
            for j, n in enumerate(tiles):
                writer.writerow([repr(eps), n, repr(float(matrix[i, j]))])
    header = "tiles".ljust(8) + "".join(str(n).rjust(8) for n in tiles)
    print(header)
    for i, eps in enumerate(args.eps):
        print(f"{eps:<8}" + "".join(f"{matrix[i, j]:8.3f}" for j in range(len(tiles))))
    print(f"wrote {path}")
    return 0


def _sphere(x):
    return float(np.sum(x ** 2))


def _shifted_sphere(x):
    return float(np.sum((x - 3.0) ** 2))


def _rastrigin(x):
    return float(10.0 * x.size + np.sum(x ** 2 - 10.0 * np.cos(2.0 * np.pi * x)))


def _ellipsoid(x):
    coeffs = 100.0 ** (np.arange(x.size) / max(1, x.size - 1))
    return float(np.sum(coeffs * x ** 2))


BENCH_FUNCTIONS = {
    "sphere": _sphere,
    "shifted-sphere": _shifted_sphere,
    "rastrigin": _rastrigin,
    "ellipsoid": _ellipsoid,
}


def _run_bench(args) -> int:
    objective = BENCH_FUNCTIONS[args.function]
    trace = None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        trace = out / "trace.csv"
    result = minimize(objective, OptimizerKind(args.optimizer), args.dim, args.budget,
                      rng=np.random.default_rng(args.seed), trace=trace)
    print(f"{args.function} d={args.dim} budget={args.budget} "
          f"optimizer={args.optimizer}: best value {result.best_value:.6e} "
          f"after {result.evaluations} evaluations")
    if trace:
        print(f"wrote {trace}")
    return 0


def _run_check_server(args) -> int:
    model = RemoteModel(args.endpoint)
    print(f"endpoint: {args.endpoint}")
    print(f"shape: {list(model.input_shape)}")
    print(f"classes: {model.num_classes}")
    probe = ImageTensor(np.full(model.input_shape, 0.5))
    logits = model.logits(probe)
    print(f"probe logits: first 5 of {logits.size} -> {np.round(logits[:5], 4).tolist()}")
    return 0


def main(command: Command) -> int:
    handlers = {
        "attack": _run_attack,
        "sweep": _run_sweep,
        "bench": _run_bench,
        "check-server": _run_check_server,
    }
    try:
        return handlers[command.name](command.args)
    except DfoAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main(parse_args(sys.argv[1:])))


if __name__ == "__main__":
    console_main()
