"""Derivative-free optimizers plus a query-budgeted black-box attack harness."""

from .campaign import (
    AttackResult,
    CampaignConfig,
    CampaignStats,
    export_results,
    run_attack,
    run_campaign,
    tile_sweep,
)
from .dfo import OptimizerKind, minimize
from .models import (
    CountingOracle,
    LabeledImage,
    LinearModel,
    MlpModel,
    ModelOracle,
    RemoteModel,
    load_model,
    save_model,
    synthetic_blob_dataset,
    train_toy_mlp,
)
from .objectives import AttackObjective, AttackSpec, ProblemForm, QueryCounter
from .tensor_core import (
    ImageTensor,
    LossKind,
    apply_perturbation,
    cross_entropy_loss,
    cw_loss,
    softmax,
)
from .tiling import TileGrid, expand, random_signed_tiles, single_shot_tiled_attack, tile_boundaries

__all__ = [
    "AttackObjective",
    "AttackResult",
    "AttackSpec",
    "CampaignConfig",
    "CampaignStats",
    "CountingOracle",
    "ImageTensor",
    "LabeledImage",
    "LinearModel",
    "LossKind",
    "MlpModel",
    "ModelOracle",
    "OptimizerKind",
    "ProblemForm",
    "QueryCounter",
    "RemoteModel",
    "TileGrid",
    "apply_perturbation",
    "cross_entropy_loss",
    "cw_loss",
    "expand",
    "export_results",
    "load_model",
    "minimize",
    "random_signed_tiles",
    "run_attack",
    "run_campaign",
    "save_model",
    "single_shot_tiled_attack",
    "softmax",
    "synthetic_blob_dataset",
    "tile_boundaries",
    "tile_sweep",
    "train_toy_mlp",
]
