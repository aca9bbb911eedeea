"""Logits-only model oracles.

Built-in desk-scale classifiers (analytic linear, trainable two-layer MLP)
let the whole suite run offline; RemoteModel speaks the HTTP wire protocol to
attack real networks served elsewhere.  Every oracle is deterministic: the
same image always yields the same logits.
"""

from __future__ import annotations

import json
import struct
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .errors import (
    InvalidInputError,
    MalformedResponseError,
    OracleError,
    OracleShapeError,
    OracleTimeoutError,
    ShapeError,
    TrainingError,
)
from .tensor_core import ImageTensor


class ModelOracle(ABC):
    """A classifier the attacker may only query for logits."""

    input_shape: tuple[int, int, int]
    num_classes: int

    @abstractmethod
    def logits(self, image: ImageTensor) -> np.ndarray:
        ...

    def _require_shape(self, image: ImageTensor) -> None:
        if image.shape != tuple(self.input_shape):
            raise ShapeError(f"model expects {self.input_shape}, got {image.shape}")


def predicted_class(model: ModelOracle, image: ImageTensor) -> int:
    """Argmax of the logits, ties broken toward the lowest class index."""
    return int(np.argmax(model.logits(image)))


class CountingOracle(ModelOracle):
    """Wrapper that counts logits calls at the oracle boundary."""

    def __init__(self, inner: ModelOracle):
        self.inner = inner
        self.input_shape = inner.input_shape
        self.num_classes = inner.num_classes
        self.calls = 0
        self._lock = threading.Lock()

    def logits(self, image: ImageTensor) -> np.ndarray:
        with self._lock:
            self.calls += 1
        return self.inner.logits(image)


class LinearModel(ModelOracle):
    """logits = W x + b on the flattened image; the analytic test oracle."""

    def __init__(self, weights, bias, input_shape):
        W = np.asarray(weights, np.float64)
        b = np.asarray(bias, np.float64)
        c, h, w = input_shape
        if W.ndim != 2 or W.shape[1] != c * h * w or b.shape != (W.shape[0],):
            raise ShapeError(f"inconsistent linear model shapes {W.shape} / {b.shape}")
        if W.shape[0] < 2:
            raise InvalidInputError("need at least 2 classes")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InvalidInputError("model parameters must be finite")
        self.weights = W.copy()
        self.bias = b.copy()
        self.weights.setflags(write=False)
        self.bias.setflags(write=False)
        self.input_shape = (int(c), int(h), int(w))
        self.num_classes = int(W.shape[0])

    def logits(self, image: ImageTensor) -> np.ndarray:
        self._require_shape(image)
        return self.weights @ image.flat + self.bias


class MlpModel(ModelOracle):
    """Two dense layers with a ReLU in between, kept immutable once built.

    The first layer sees pixels centered at 0.5 (a fixed reparameterization
    of its bias); without it, all-positive pixel vectors let whole ReLU rows
    die during full-batch descent.
    """

    INPUT_CENTER = 0.5

    def __init__(self, w1, b1, w2, b2, input_shape):
        self.w1 = np.asarray(w1, np.float64).copy()
        self.b1 = np.asarray(b1, np.float64).copy()
        self.w2 = np.asarray(w2, np.float64).copy()
        self.b2 = np.asarray(b2, np.float64).copy()
        c, h, w = input_shape
        d = c * h * w
        hidden = self.b1.size
        if self.w1.shape != (hidden, d) or self.w2.shape != (self.b2.size, hidden):
            raise ShapeError("inconsistent MLP shapes")
        if self.b2.size < 2:
            raise InvalidInputError("need at least 2 classes")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError("model parameters must be finite")
            arr.setflags(write=False)
        self.input_shape = (int(c), int(h), int(w))
        self.num_classes = int(self.b2.size)
        self.hidden = int(hidden)

    def logits(self, image: ImageTensor) -> np.ndarray:
        self._require_shape(image)
        z1 = self.w1 @ (image.flat - self.INPUT_CENTER) + self.b1
        return self.w2 @ np.maximum(z1, 0.0) + self.b2

    def logits_batch(self, X: np.ndarray) -> np.ndarray:
        z1 = (X - self.INPUT_CENTER) @ self.w1.T + self.b1
        return np.maximum(z1, 0.0) @ self.w2.T + self.b2

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat_params(cls, flat, input_shape, hidden: int, classes: int) -> "MlpModel":
        c, h, w = input_shape
        d = c * h * w
        flat = np.asarray(flat, np.float64)
        sizes = [hidden * d, hidden, classes * hidden, classes]
        if flat.size != sum(sizes):
            raise ShapeError(f"expected {sum(sizes)} parameters, got {flat.size}")
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(hidden, d), parts[1],
                   parts[2].reshape(classes, hidden), parts[3], input_shape)


# ------------------------------------------------------------- toy training

@dataclass(frozen=True)
class LabeledImage:
    image_id: int
    image: ImageTensor
    label: int


def dataset_arrays(dataset: Sequence[LabeledImage]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([item.image.flat for item in dataset])
    y = np.array([item.label for item in dataset], dtype=np.int64)
    return X, y


def mlp_loss_and_gradients(model: MlpModel, X: np.ndarray, labels: np.ndarray
                           ) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient, flattened in the
    same order as MlpModel.flat_params()."""
    n = X.shape[0]
    Xc = X - MlpModel.INPUT_CENTER
    z1 = Xc @ model.w1.T + model.b1
    a1 = np.maximum(z1, 0.0)
    logits = a1 @ model.w2.T + model.b2

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))

    probs = np.exp(shifted - log_z[:, None])
    g = probs
    g[np.arange(n), labels] -= 1.0
    g /= n

    grad_w2 = g.T @ a1
    grad_b2 = g.sum(axis=0)
    g_hidden = (g @ model.w2) * (z1 > 0.0)
    grad_w1 = g_hidden.T @ Xc
    grad_b1 = g_hidden.sum(axis=0)
    grad = np.concatenate([grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2])
    return loss, grad


def descend_mlp(model: MlpModel, X: np.ndarray, labels: np.ndarray,
                epochs: int, learning_rate: float) -> MlpModel:
    """Plain full-batch gradient descent; returns a new model each call."""
    params = model.flat_params()
    for _ in range(int(epochs)):
        current = MlpModel.from_flat_params(params, model.input_shape,
                                            model.hidden, model.num_classes)
        _, grad = mlp_loss_and_gradients(current, X, labels)
        params = params - learning_rate * grad
    return MlpModel.from_flat_params(params, model.input_shape,
                                     model.hidden, model.num_classes)


def init_mlp(input_shape, hidden: int, classes: int, rng: np.random.Generator) -> MlpModel:
    c, h, w = input_shape
    d = c * h * w
    w1 = rng.normal(0.0, 1.0 / np.sqrt(d), size=(hidden, d))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(classes, hidden))
    return MlpModel(w1, np.zeros(hidden), w2, np.zeros(classes), input_shape)


def accuracy(model: ModelOracle, dataset: Sequence[LabeledImage]) -> float:
    if not dataset:
        return float("nan")
    hits = sum(predicted_class(model, item.image) == item.label for item in dataset)
    return hits / len(dataset)


def train_toy_mlp(dataset: Sequence[LabeledImage], epochs: int = 300,
                  learning_rate: float = 0.5, rng: np.random.Generator | None = None,
                  hidden: int = 24, accuracy_floor: float = 0.9,
                  attempts: int = 3) -> MlpModel:
    """Train a small MLP until it classifies the dataset well enough.

    Re-initializes with a fresh draw from ``rng`` on failure, at most
    ``attempts`` times; persistent under-fitting raises TrainingError.
    """
    if not dataset:
        raise InvalidInputError("cannot train on an empty dataset")
    if rng is None:
        rng = np.random.default_rng()
    X, labels = dataset_arrays(dataset)
    classes = int(labels.max()) + 1
    if classes < 2:
        raise InvalidInputError("need at least 2 classes")
    shape = dataset[0].image.shape
    best_acc = 0.0
    for _ in range(attempts):
        model = descend_mlp(init_mlp(shape, hidden, classes, rng),
                            X, labels, epochs, learning_rate)
        acc = accuracy(model, dataset)
        if acc >= accuracy_floor:
            return model
        best_acc = max(best_acc, acc)
    raise TrainingError(
        f"MLP stuck at {best_acc:.1%} accuracy after {attempts} attempts"
    )


def synthetic_blob_dataset(n_per_class: int, shape, n_classes: int,
                           separation: float, rng: np.random.Generator,
                           noise_std: float = 0.1, blocks: int = 4,
                           near_pair_flip: float = 0.15) -> list[LabeledImage]:
    """Gaussian blobs around class templates built from coarse sign blocks.

    Templates are 0.5 +/- separation on a ``blocks`` x ``blocks`` grid
    expanded to full resolution, so tiled perturbations line up with what
    actually separates the classes.  Noise std is 0.1 and images are clipped
    back into [0, 1].

    Classes come in pairs.  The first pair differs only on a
    ``near_pair_flip`` fraction of blocks (a close decision boundary);
    later pairs are antipodal.  All pairwise template distances scale with
    ``separation``, and the margin mixture is what makes the toy model show
    the same tiled-noise behavior as real networks: borderline images flip
    under one lucky draw, far ones only under a directed search.
    """
    from .tiling import TileGrid, expand  # local import to avoid a cycle

    if separation <= 0:
        raise InvalidInputError("separation must be positive")
    c, h, w = shape
    grid = TileGrid(min(blocks, h, w), (c, h, w))
    dim = grid.search_dimension

    blocks_per_channel = dim // c

    def near_partner(base: np.ndarray) -> np.ndarray:
        # Flip equally many +1 and -1 blocks per channel so the difference
        # direction is orthogonal to constant brightness shifts.
        partner = base.copy()
        per_sign = max(1, round(near_pair_flip * blocks_per_channel / 2))
        for ch in range(c):
            offset = ch * blocks_per_channel
            segment = base[offset: offset + blocks_per_channel]
            pos = offset + np.flatnonzero(segment > 0)
            neg = offset + np.flatnonzero(segment < 0)
            k = min(per_sign, pos.size, neg.size)
            if k:
                partner[rng.choice(pos, size=k, replace=False)] *= -1.0
                partner[rng.choice(neg, size=k, replace=False)] *= -1.0
        if np.array_equal(partner, base):  # degenerate all-same-sign channels
            partner[0] *= -1.0
        return partner

    def balanced_base() -> np.ndarray:
        # Zero block-sign sum per channel: between-class directions stay
        # orthogonal to whole-image brightness shifts, so the 1-tile noise
        # column of a sweep measures tiling, not exposure.
        segments = []
        for _ in range(c):
            signs = np.ones(blocks_per_channel)
            signs[: blocks_per_channel // 2] = -1.0
            segments.append(rng.permutation(signs))
        return np.concatenate(segments)

    patterns: list[np.ndarray] = []
    pair_index = 0
    while len(patterns) < n_classes:
        base = balanced_base()
        patterns.append(base)
        if len(patterns) < n_classes:
            partner = near_partner(base) if pair_index == 0 else -base
            patterns.append(partner)
        pair_index += 1
    templates = [0.5 + separation * expand(grid, p) for p in patterns]

    dataset = []
    for i in range(n_per_class * n_classes):
        label = i % n_classes
        pixels = templates[label] + noise_std * rng.standard_normal(c * h * w)
        image = ImageTensor.from_clipped(pixels.reshape(shape))
        dataset.append(LabeledImage(image_id=i, image=image, label=label))
    return dataset


# ------------------------------------------------------------ serialization

_MAGIC = b"BBOX"
_VERSION = 1
_KIND_LINEAR = 1
_KIND_MLP = 2


def model_to_bytes(model: ModelOracle) -> bytes:
    """Flat little-endian float32 payload behind a 16-byte header."""
    c, h, w = model.input_shape
    if isinstance(model, LinearModel):
        kind = _KIND_LINEAR
        payload = np.concatenate([[c, h, w], model.weights.ravel(), model.bias])
    elif isinstance(model, MlpModel):
        kind = _KIND_MLP
        payload = np.concatenate([[c, h, w, model.hidden], model.flat_params()])
    else:
        raise InvalidInputError(f"cannot serialize {type(model).__name__}")
    header = struct.pack("<4sIII", _MAGIC, _VERSION, kind, model.num_classes)
    return header + payload.astype("<f4").tobytes()


def model_from_bytes(raw: bytes) -> ModelOracle:
    if len(raw) < 16:
        raise InvalidInputError("model file too short for a header")
    magic, version, kind, classes = struct.unpack("<4sIII", raw[:16])
    if magic != _MAGIC:
        raise InvalidInputError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise InvalidInputError(f"unsupported model file version {version}")
    payload = np.frombuffer(raw[16:], dtype="<f4").astype(np.float64)
    if kind == _KIND_LINEAR:
        c, h, w = (int(v) for v in payload[:3])
        d = c * h * w
        body = payload[3:]
        if body.size != classes * d + classes:
            raise ShapeError("linear model payload has the wrong length")
        return LinearModel(body[: classes * d].reshape(classes, d),
                           body[classes * d:], (c, h, w))
    if kind == _KIND_MLP:
        c, h, w, hidden = (int(v) for v in payload[:4])
        return MlpModel.from_flat_params(payload[4:], (c, h, w), hidden, classes)
    raise InvalidInputError(f"unknown model kind {kind}")


def save_model(model: ModelOracle, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> ModelOracle:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


# ------------------------------------------------------------ wire protocol

def canonical_json(obj) -> bytes:
    """The one JSON encoding both ends of the wire agree on, byte for byte."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("ascii")


def encode_meta_response(shape, classes: int) -> bytes:
    return canonical_json({"shape": [int(v) for v in shape], "classes": int(classes)})


def decode_meta_response(raw: bytes) -> tuple[tuple[int, int, int], int]:
    try:
        body = json.loads(raw)
        shape = tuple(int(v) for v in body["shape"])
        classes = int(body["classes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponseError(f"bad /meta response: {exc}") from exc
    if len(shape) != 3 or any(v < 1 for v in shape) or classes < 2:
        raise MalformedResponseError(f"implausible metadata {body!r}")
    return shape, classes


def encode_logits_request(flat_image) -> bytes:
    return canonical_json({"image": [float(v) for v in np.asarray(flat_image).ravel()]})


def decode_logits_request(raw: bytes) -> np.ndarray:
    try:
        body = json.loads(raw)
        values = np.asarray(body["image"], dtype=np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponseError(f"bad /logits request: {exc}") from exc
    if values.ndim != 1 or values.size == 0 or not np.all(np.isfinite(values)):
        raise MalformedResponseError("image payload must be a flat finite float array")
    return values


def encode_logits_response(logits) -> bytes:
    return canonical_json({"logits": [float(v) for v in np.asarray(logits).ravel()]})


def decode_logits_response(raw: bytes, expected_classes: int) -> np.ndarray:
    try:
        body = json.loads(raw)
        values = np.asarray(body["logits"], dtype=np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedResponseError(f"bad /logits response: {exc}") from exc
    if values.ndim != 1:
        raise MalformedResponseError("logits payload must be a flat array")
    if values.size != expected_classes:
        raise OracleShapeError(
            f"server declared {expected_classes} classes but sent {values.size} logits"
        )
    if not np.all(np.isfinite(values)):
        raise MalformedResponseError("logits contain non-finite values")
    return values


class RemoteModel(ModelOracle):
    """HTTP client for a model server; one request per logits call.

    Failures surface as distinct oracle errors and are never retried, so the
    caller's query accounting stays exact.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = float(timeout)
        raw = self._get(f"{self.endpoint}/meta")
        self.input_shape, self.num_classes = decode_meta_response(raw)

    def _get(self, url: str) -> bytes:
        try:
            response = requests.get(url, timeout=self.timeout)
        except requests.Timeout as exc:
            raise OracleTimeoutError(f"GET {url} timed out") from exc
        except requests.RequestException as exc:
            raise OracleError(f"GET {url} failed: {exc}") from exc
        return self._body_or_error(response, url)

    @staticmethod
    def _body_or_error(response, url: str) -> bytes:
        if response.status_code != 200:
            detail = ""
            try:
                detail = json.loads(response.content).get("error", "")
            except (ValueError, AttributeError):
                pass
            raise OracleError(f"{url} returned {response.status_code}: {detail}")
        return response.content

    def logits(self, image: ImageTensor) -> np.ndarray:
        if image.shape != tuple(self.input_shape):
            raise OracleShapeError(f"server expects {self.input_shape}, got {image.shape}")
        url = f"{self.endpoint}/logits"
        body = encode_logits_request(image.flat)
        try:
            response = requests.post(url, data=body,
                                     headers={"Content-Type": "application/json"},
                                     timeout=self.timeout)
        except requests.Timeout as exc:
            raise OracleTimeoutError(f"POST {url} timed out") from exc
        except requests.RequestException as exc:
            raise OracleError(f"POST {url} failed: {exc}") from exc
        return decode_logits_response(self._body_or_error(response, url), self.num_classes)
