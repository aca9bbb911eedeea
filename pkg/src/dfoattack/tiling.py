"""Tiled noise: low-dimensional tile values expanded to full-resolution deltas.

Constraining the perturbation to be constant on square pixel blocks shrinks
the search space from C*H*W to n_tiles**2 (times C when each channel gets its
own value), which is what makes evolution strategies viable on images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidGridError, ShapeError
from .tensor_core import ImageTensor, apply_perturbation


@dataclass(frozen=True)
class TileGrid:
    """Square tiling of an image plane.

    n_tiles counts tiles per image side.  With ``per_channel`` (the default)
    every channel carries its own n_tiles x n_tiles value block; otherwise one
    block is shared by all channels.
    """

    n_tiles: int
    image_shape: tuple[int, int, int]
    per_channel: bool = True

    def __post_init__(self):
        c, h, w = self.image_shape
        if c < 1 or h < 1 or w < 1:
            raise InvalidGridError(f"bad image shape {self.image_shape}")
        if not 1 <= self.n_tiles <= min(h, w):
            raise InvalidGridError(
                f"n_tiles must be in [1, {min(h, w)}] for shape {self.image_shape}, got {self.n_tiles}"
            )

    @property
    def search_dimension(self) -> int:
        n = self.n_tiles * self.n_tiles
        return n * self.image_shape[0] if self.per_channel else n


def tile_boundaries(extent: int, n_tiles: int) -> np.ndarray:
    """Cut positions [0, ..., extent] splitting ``extent`` pixels into
    ``n_tiles`` runs whose widths differ by at most one.

    Position i is floor(i * extent / n_tiles), in exact integer arithmetic.
    """
    if not 1 <= n_tiles <= extent:
        raise InvalidGridError(f"cannot cut extent {extent} into {n_tiles} tiles")
    i = np.arange(n_tiles + 1, dtype=np.int64)
    return (i * extent) // n_tiles


def expand(grid: TileGrid, tile_values) -> np.ndarray:
    """Spread tile values onto the full image plane.

    Returns a flat delta of length C*H*W in which every pixel of tile (r, c)
    equals the corresponding tile cell.  Linear in ``tile_values`` and never
    changes the L-infinity norm.
    """
    values = np.asarray(tile_values, dtype=np.float64)
    if values.size != grid.search_dimension:
        raise ShapeError(
            f"expected {grid.search_dimension} tile values for {grid}, got {values.size}"
        )
    c, h, w = grid.image_shape
    n = grid.n_tiles
    row_widths = np.diff(tile_boundaries(h, n))
    col_widths = np.diff(tile_boundaries(w, n))
    if grid.per_channel:
        blocks = values.reshape(c, n, n)
    else:
        blocks = np.broadcast_to(values.reshape(1, n, n), (c, n, n))
    delta = np.repeat(np.repeat(blocks, row_widths, axis=1), col_widths, axis=2)
    return delta.reshape(-1)


def random_signed_tiles(grid: TileGrid, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Each tile value independently +epsilon or -epsilon with probability 1/2."""
    signs = np.where(rng.random(grid.search_dimension) < 0.5, 1.0, -1.0)
    return float(epsilon) * signs


def single_shot_tiled_attack(
    model,
    x: ImageTensor,
    y: int,
    epsilon: float,
    grid: TileGrid,
    rng: np.random.Generator,
) -> tuple[bool, ImageTensor]:
    """Draw one random tiled sign pattern, apply it, and query the model once.

    Returns (fooled, perturbed image) where fooled means the predicted class
    is no longer ``y``.  The caller is expected to have checked that the model
    classifies ``x`` as ``y`` in the first place.
    """
    delta = expand(grid, random_signed_tiles(grid, epsilon, rng))
    perturbed = apply_perturbation(x, delta)
    logits = model.logits(perturbed)
    return int(np.argmax(logits)) != int(y), perturbed
