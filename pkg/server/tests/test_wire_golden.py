"""Byte-level conformance against the golden files shared with the attacker
side (both packages must produce and accept identical bytes)."""

import json
from pathlib import Path

import numpy as np
import pytest

from model_server_example.bbox_models import load_bbox_file
from model_server_example.wire import (
    ProtocolError,
    decode_image_request,
    encode_error,
    encode_logits,
    encode_meta,
)

GOLDEN = Path(__file__).resolve().parents[2] / "tests" / "golden"


def test_meta_encoding_matches_golden():
    assert encode_meta((1, 2, 2), 3) == (GOLDEN / "meta_response.json").read_bytes()


def test_logits_encoding_matches_golden():
    assert encode_logits(np.array([1.5, -2.0, 0.25])) == \
        (GOLDEN / "logits_response.json").read_bytes()


def test_request_golden_decodes():
    raw = (GOLDEN / "logits_request.json").read_bytes()
    flat = decode_image_request(raw, expected_length=4)
    np.testing.assert_array_equal(flat, [0.0, 0.25, 0.5, 1.0])


def test_request_decode_rejections():
    good = (GOLDEN / "logits_request.json").read_bytes()
    with pytest.raises(ProtocolError):
        decode_image_request(good, expected_length=5)  # wrong declared length
    with pytest.raises(ProtocolError):
        decode_image_request(b"not json", 4)
    with pytest.raises(ProtocolError):
        decode_image_request(b'{"pixels":[0.1]}', 1)
    with pytest.raises(ProtocolError):
        decode_image_request(b'{"image":[0.1,2.5]}', 2)  # out of [0,1]
    with pytest.raises(ProtocolError):
        decode_image_request(b'{"image":[0.1,"x"]}', 2)


def test_error_encoding_is_canonical():
    assert encode_error("boom") == b'{"error":"boom"}'


def test_bbox_files_reproduce_attacker_side_logits():
    # The .bbox fixtures and their expected logits were produced by the
    # attacker-side implementation; loading them here must agree exactly
    # (both sides do float64 math on the same float32 parameters).
    fixture = json.loads((GOLDEN / "model_fixtures.json").read_text())
    image = np.asarray(fixture["image"])

    linear = load_bbox_file(GOLDEN / "linear_toy.bbox")
    assert linear.shape == tuple(fixture["shape"])
    np.testing.assert_allclose(linear.logits(image), fixture["linear_logits"],
                               rtol=0, atol=1e-12)

    mlp = load_bbox_file(GOLDEN / "mlp_toy.bbox")
    np.testing.assert_allclose(mlp.logits(image), fixture["mlp_logits"],
                               rtol=0, atol=1e-12)
