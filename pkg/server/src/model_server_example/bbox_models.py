"""Reader for the flat-float32 ``BBOX`` model file format.

Header: magic ``BBOX``, version u32, kind u32, classes u32, all little
endian, 16 bytes total.  The payload is one float32 array: shape metadata
first ([C, H, W] for kind 1, [C, H, W, hidden] for kind 2), then the
parameters.  Kind 1 is a linear map ``W x + b``; kind 2 is a two-layer ReLU
MLP whose first layer sees pixels centered at 0.5.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"BBOX"
VERSION = 1
KIND_LINEAR = 1
KIND_MLP = 2
MLP_INPUT_CENTER = 0.5


class ModelFileError(ValueError):
    pass


class ServedModel:
    """A loaded classifier: flat [0,1] pixels in, raw logits out."""

    def __init__(self, shape, classes, forward):
        self.shape = tuple(int(v) for v in shape)
        self.classes = int(classes)
        self._forward = forward

    @property
    def input_length(self) -> int:
        c, h, w = self.shape
        return c * h * w

    def logits(self, flat_image: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(flat_image, dtype=np.float64))

    def probabilities(self, flat_image: np.ndarray) -> np.ndarray:
        logits = self.logits(flat_image)
        shifted = logits - logits.max()
        exp = np.exp(shifted)
        return exp / exp.sum()


def load_bbox_file(path) -> ServedModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise ModelFileError("file too short for a BBOX header")
    magic, version, kind, classes = struct.unpack("<4sIII", raw[:16])
    if magic != MAGIC:
        raise ModelFileError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ModelFileError(f"unsupported version {version}")
    payload = np.frombuffer(raw[16:], dtype="<f4").astype(np.float64)

    if kind == KIND_LINEAR:
        c, h, w = (int(v) for v in payload[:3])
        d = c * h * w
        body = payload[3:]
        if body.size != classes * d + classes:
            raise ModelFileError("linear payload length mismatch")
        W = body[: classes * d].reshape(classes, d)
        b = body[classes * d:]
        return ServedModel((c, h, w), classes, lambda x: W @ x + b)

    if kind == KIND_MLP:
        c, h, w, hidden = (int(v) for v in payload[:4])
        d = c * h * w
        body = payload[4:]
        sizes = [hidden * d, hidden, classes * hidden, classes]
        if body.size != sum(sizes):
            raise ModelFileError("mlp payload length mismatch")
        parts = np.split(body, np.cumsum(sizes)[:-1])
        w1 = parts[0].reshape(hidden, d)
        b1 = parts[1]
        w2 = parts[2].reshape(classes, hidden)
        b2 = parts[3]

        def forward(x: np.ndarray) -> np.ndarray:
            z1 = w1 @ (x - MLP_INPUT_CENTER) + b1
            return w2 @ np.maximum(z1, 0.0) + b2

        return ServedModel((c, h, w), classes, forward)

    raise ModelFileError(f"unknown model kind {kind}")
