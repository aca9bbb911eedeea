"""The JSON wire schema, encoded canonically so both ends agree byte for byte.

Kept deliberately independent of the attacker-side package: this file is the
server's half of the protocol contract and is tested against the same golden
files.
"""

from __future__ import annotations

import json

import numpy as np


class ProtocolError(ValueError):
    """Request bytes that do not match the wire schema."""


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("ascii")


def encode_meta(shape, classes: int) -> bytes:
    return canonical_json({"shape": [int(v) for v in shape], "classes": int(classes)})


def encode_logits(logits) -> bytes:
    return canonical_json({"logits": [float(v) for v in np.asarray(logits).ravel()]})


def encode_error(message: str) -> bytes:
    return canonical_json({"error": str(message)})


def decode_image_request(raw: bytes, expected_length: int) -> np.ndarray:
    """Flat [0,1] float image of exactly the declared length, or ProtocolError."""
    try:
        body = json.loads(raw)
    except ValueError as exc:
        raise ProtocolError(f"body is not valid JSON: {exc}") from exc
    if not isinstance(body, dict) or "image" not in body:
        raise ProtocolError('body must be {"image": [floats]}')
    try:
        values = np.asarray(body["image"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"image entries must be numbers: {exc}") from exc
    if values.ndim != 1:
        raise ProtocolError("image must be a flat array")
    if values.size != expected_length:
        raise ProtocolError(
            f"image has {values.size} values, model expects {expected_length}"
        )
    if not np.all(np.isfinite(values)):
        raise ProtocolError("image contains non-finite values")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ProtocolError("pixel intensities must lie in [0, 1]")
    return values
