"""Image, logits, probability, and loss primitives shared by every module.

All functions here are pure and operate on float64 numpy arrays.  Losses are
evaluated in log-space so extreme logits neither overflow nor produce -inf
before they have to.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShapeError


class LossKind(enum.Enum):
    """Which attack loss drives the objective."""

    CROSS_ENTROPY = "ce"
    CARLINI_WAGNER = "cw"


@dataclass(frozen=True)
class ImageTensor:
    """A C x H x W block of pixel intensities, each in [0, 1].

    The backing array is copied on construction and marked read-only, so an
    instance can be shared across threads freely.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"image must be (C, H, W), got shape {arr.shape}")
        if arr.size == 0:
            raise ShapeError("image must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise InvalidInputError("pixel intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, flat, shape: tuple[int, int, int]) -> "ImageTensor":
        flat = np.asarray(flat, dtype=np.float64)
        c, h, w = shape
        if flat.size != c * h * w:
            raise ShapeError(f"expected {c * h * w} values for shape {shape}, got {flat.size}")
        return cls(flat.reshape(shape))

    @classmethod
    def from_clipped(cls, data) -> "ImageTensor":
        """Construct after clipping out-of-range intensities to [0, 1]."""
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("image contains non-finite values")
        return cls(np.clip(arr, 0.0, 1.0))

    @classmethod
    def _wrap_valid(cls, arr: np.ndarray) -> "ImageTensor":
        # Fast path for freshly clipped, uniquely owned arrays (hot loop of
        # the attack); skips validation and the defensive copy.
        instance = object.__new__(cls)
        arr.setflags(write=False)
        object.__setattr__(instance, "data", arr)
        return instance

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def flat(self) -> np.ndarray:
        """Read-only row-major view of the pixels."""
        return self.data.reshape(-1)


def as_logits(values) -> np.ndarray:
    """Validate and return a logits vector: length >= 2, all entries finite."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ShapeError(f"logits must be a vector of length >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("logits contain non-finite values")
    return arr


def softmax(logits) -> np.ndarray:
    """Probability vector of the logits, computed with max-subtraction."""
    arr = as_logits(logits)
    shifted = arr - arr.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def log_softmax(logits) -> np.ndarray:
    arr = as_logits(logits)
    shifted = arr - arr.max()
    return shifted - np.log(np.exp(shifted).sum())


def _check_label(logits: np.ndarray, label: int) -> int:
    label = int(label)
    if not 0 <= label < logits.size:
        raise InvalidInputError(f"label {label} out of range for {logits.size} classes")
    return label


def cross_entropy_loss(logits, label: int) -> float:
    """-log P(label | logits); non-negative by construction."""
    arr = as_logits(logits)
    label = _check_label(arr, label)
    # max(0, .) guards the tiny negative float noise of the log-sum-exp.
    return max(0.0, float(-log_softmax(arr)[label]))


def cw_loss(logits, label: int) -> float:
    """Margin loss -P(label) + max over the other classes of P.

    Positive exactly when the argmax differs from ``label``.  Ties in the max
    are irrelevant for the value; argmax-style decisions elsewhere break ties
    toward the lowest class index.
    """
    arr = as_logits(logits)
    label = _check_label(arr, label)
    probs = softmax(arr)
    others = np.delete(probs, label)
    return float(others.max() - probs[label])


def apply_perturbation(x: ImageTensor, delta) -> ImageTensor:
    """Return clip(x + delta, 0, 1) as a new image; ``x`` is untouched."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.size != x.size:
        raise ShapeError(f"delta has {delta.size} entries, image has {x.size}")
    if not np.all(np.isfinite(delta)):
        raise InvalidInputError("delta contains non-finite values")
    perturbed = x.flat + delta.reshape(-1)
    np.clip(perturbed, 0.0, 1.0, out=perturbed)
    return ImageTensor._wrap_valid(perturbed.reshape(x.shape))
