"""Attack campaigns over image sets, statistics, and CSV export.

A campaign derives one rng per image from (campaign seed, image id), so runs
are reproducible regardless of worker count, and images stay independently
randomized.  Query statistics are reported over successful attacks (medians
at the budget cap would say nothing) with the all-attacks variant exported
alongside, failures counted at the cap.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dfo import OptimizerKind, minimize
from .errors import DfoAttackError, InvalidInputError, OracleError
from .models import LabeledImage, ModelOracle
from .objectives import AttackObjective, AttackSpec, ProblemForm, QueryCounter
from .tensor_core import LossKind
from .tiling import TileGrid, single_shot_tiled_attack


@dataclass(frozen=True)
class CampaignConfig:
    optimizer: OptimizerKind = OptimizerKind.CMA_FULL
    form: ProblemForm = ProblemForm.CONTINUOUS
    mode: str = "untargeted"            # "untargeted" | "targeted"
    epsilon: float = 0.05
    n_tiles: int = 50
    query_limit: int = 10_000
    image_count: int = 0                # 0 = attack every image given
    seed: int = 0
    loss: LossKind = LossKind.CROSS_ENTROPY
    per_channel: bool = True
    warm_start: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.query_limit < 1:
            raise InvalidInputError("query_limit must be >= 1")
        if self.epsilon <= 0:
            raise InvalidInputError("epsilon must be positive")
        if self.mode not in ("untargeted", "targeted"):
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")

    @property
    def targeted(self) -> bool:
        return self.mode == "targeted"


_CONFIG_PARSERS = {
    "optimizer": OptimizerKind,
    "form": ProblemForm,
    "mode": str,
    "epsilon": float,
    "n_tiles": int,
    "query_limit": int,
    "image_count": int,
    "seed": int,
    "loss": LossKind,
    "per_channel": lambda s: s.lower() in ("1", "true", "yes"),
    "warm_start": lambda s: s.lower() in ("1", "true", "yes"),
    "workers": int,
}


def read_config_file(path) -> dict:
    """key=value lines mirroring CampaignConfig field names; # starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_PARSERS:
            raise InvalidInputError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = _CONFIG_PARSERS[key](raw)
        except ValueError as exc:
            raise InvalidInputError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


@dataclass(frozen=True)
class AttackResult:
    image_id: int
    initially_correct: bool
    success: bool
    queries_used: int
    final_loss: float       # best objective value (minimization convention)
    wall_ms: float
    error: Optional[str] = None


@dataclass
class CampaignStats:
    results: list[AttackResult]
    query_limit: int

    @property
    def n_images(self) -> int:
        return len(self.results)

    @property
    def n_initially_correct(self) -> int:
        return sum(r.initially_correct for r in self.results)

    @property
    def n_success(self) -> int:
        return sum(r.success for r in self.results)

    @property
    def success_rate(self) -> Optional[float]:
        # Over initially correctly classified images only; undefined without any.
        correct = self.n_initially_correct
        return self.n_success / correct if correct else None

    def _success_queries(self) -> list[int]:
        return [r.queries_used for r in self.results if r.success]

    def _all_queries(self) -> list[int]:
        # Failures count at the budget cap in the all-attacks variant.
        return [r.queries_used if r.success else self.query_limit
                for r in self.results if r.initially_correct]

    @property
    def average_queries(self) -> Optional[float]:
        q = self._success_queries()
        return float(np.mean(q)) if q else None

    @property
    def median_queries(self) -> Optional[float]:
        q = self._success_queries()
        return float(np.median(q)) if q else None

    @property
    def average_queries_all(self) -> Optional[float]:
        q = self._all_queries()
        return float(np.mean(q)) if q else None

    @property
    def median_queries_all(self) -> Optional[float]:
        q = self._all_queries()
        return float(np.median(q)) if q else None

    def cumulative_curve(self) -> list[tuple[int, float]]:
        """(queries, cumulative success rate) rows, non-decreasing, ending at
        the budget limit where the rate equals success_rate exactly."""
        correct = self.n_initially_correct
        if not correct:
            return []
        counts = sorted(self._success_queries())
        rows = []
        seen = 0
        for q in counts:
            seen += 1
            if rows and rows[-1][0] == q:
                rows[-1] = (q, seen / correct)
            else:
                rows.append((q, seen / correct))
        if not rows or rows[-1][0] != self.query_limit:
            rows.append((self.query_limit, seen / correct))
        return rows


def run_attack(config: CampaignConfig, spec: AttackSpec, model: ModelOracle,
               rng: np.random.Generator, image_id: int = 0) -> AttackResult:
    """Attack one image: clean check (uncounted), warm start, minimize with
    early exit on the first success; queries_used is exact."""
    start = time.perf_counter()
    try:
        clean_logits = model.logits(spec.x)
    except OracleError as exc:
        return AttackResult(image_id, False, False, 0, float("nan"),
                            _elapsed_ms(start), error=str(exc))
    if int(np.argmax(clean_logits)) != spec.true_label:
        return AttackResult(image_id, False, False, 0, float("nan"), _elapsed_ms(start))

    counter = QueryCounter(config.query_limit)
    objective = AttackObjective(spec, model, counter, form=config.form, rng=rng)
    x0 = objective.warm_start_point(rng) if config.warm_start else None
    outcome = minimize(
        objective,
        config.optimizer,
        objective.dimension,
        config.query_limit,
        stop_predicate=lambda point, value: objective.succeeded,
        rng=rng,
        x0=x0,
    )
    return AttackResult(
        image_id=image_id,
        initially_correct=True,
        success=objective.succeeded,
        queries_used=counter.used,
        final_loss=outcome.best_value,
        wall_ms=_elapsed_ms(start),
        error=outcome.error,
    )


def _elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


def _image_rng(seed: int, image_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, image_id]))


def _choose_target(rng: np.random.Generator, true_label: int, classes: int) -> int:
    pick = int(rng.integers(classes - 1))
    return pick if pick < true_label else pick + 1


def run_campaign(config: CampaignConfig, images: Sequence[LabeledImage],
                 model: ModelOracle) -> CampaignStats:
    if not images:
        raise InvalidInputError("campaign needs at least one image")
    if config.image_count:
        images = images[: config.image_count]

    def attack_one(item: LabeledImage) -> AttackResult:
        rng = _image_rng(config.seed, item.image_id)
        target = None
        if config.targeted:
            target = _choose_target(rng, item.label, model.num_classes)
        grid = TileGrid(config.n_tiles, item.image.shape, per_channel=config.per_channel)
        spec = AttackSpec(item.image, item.label, config.epsilon, config.loss,
                          grid, target_label=target)
        try:
            return run_attack(config, spec, model, rng, image_id=item.image_id)
        except DfoAttackError as exc:
            return AttackResult(item.image_id, False, False, 0, float("nan"),
                                0.0, error=str(exc))

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(attack_one, images))
    else:
        results = [attack_one(item) for item in images]
    return CampaignStats(results=results, query_limit=config.query_limit)


def tile_sweep(model: ModelOracle, images: Sequence[LabeledImage],
               epsilon_list: Sequence[float], tile_counts: Sequence[int],
               rng: np.random.Generator, per_channel: bool = True) -> np.ndarray:
    """Single-shot success-rate matrix, epsilon rows by tile-count columns.

    Only images the model classifies correctly take part (checked once,
    uncounted); each cell costs one query per kept image.
    """
    kept = [item for item in images
            if int(np.argmax(model.logits(item.image))) == item.label]
    matrix = np.full((len(epsilon_list), len(tile_counts)), np.nan)
    if not kept:
        return matrix
    for i, epsilon in enumerate(epsilon_list):
        for j, n_tiles in enumerate(tile_counts):
            fooled = 0
            for item in kept:
                grid = TileGrid(n_tiles, item.image.shape, per_channel=per_channel)
                hit, _ = single_shot_tiled_attack(model, item.image, item.label,
                                                  epsilon, grid, rng)
                fooled += hit
            matrix[i, j] = fooled / len(kept)
    return matrix


# ----------------------------------------------------------------- export

RESULTS_HEADER = ["image_id", "initially_correct", "success", "queries",
                  "final_loss", "wall_ms"]
CURVE_HEADER = ["queries", "cumulative_success_rate"]


def export_results(stats: CampaignStats, out_dir, include_timing: bool = True
                   ) -> dict[str, Path]:
    """Write results.csv, cumulative.csv, and summary.csv under ``out_dir``.

    With include_timing=False the wall_ms column is written as 0.0 so that
    equal seeds produce byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out / "results.csv",
        "cumulative": out / "cumulative.csv",
        "summary": out / "summary.csv",
    }

    with open(paths["results"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in stats.results:
            wall = r.wall_ms if include_timing else 0.0
            writer.writerow([r.image_id, _fmt_bool(r.initially_correct),
                             _fmt_bool(r.success), r.queries_used,
                             repr(float(r.final_loss)), repr(float(wall))])

    with open(paths["cumulative"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for queries, rate in stats.cumulative_curve():
            writer.writerow([queries, repr(rate)])

    with open(paths["summary"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        rows = [
            ("images", stats.n_images),
            ("initially_correct", stats.n_initially_correct),
            ("successes", stats.n_success),
            ("success_rate", _fmt_opt(stats.success_rate)),
            ("average_queries_success", _fmt_opt(stats.average_queries)),
            ("median_queries_success", _fmt_opt(stats.median_queries)),
            ("average_queries_all", _fmt_opt(stats.average_queries_all)),
            ("median_queries_all", _fmt_opt(stats.median_queries_all)),
        ]
        writer.writerows(rows)
    return paths


def _fmt_bool(flag: bool) -> str:
    return "true" if flag else "false"


def _fmt_opt(value) -> str:
    return "na" if value is None else repr(value)


def load_results_csv(path, query_limit: int) -> CampaignStats:
    results = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_HEADER:
            raise InvalidInputError(f"unexpected results header {reader.fieldnames}")
        for row in reader:
            results.append(AttackResult(
                image_id=int(row["image_id"]),
                initially_correct=row["initially_correct"] == "true",
                success=row["success"] == "true",
                queries_used=int(row["queries"]),
                final_loss=float(row["final_loss"]),
                wall_ms=float(row["wall_ms"]),
            ))
    return CampaignStats(results=results, query_limit=query_limit)
