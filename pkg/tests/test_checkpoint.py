import json

import numpy as np
import pytest

from vad import checkpoint
from vad.engine import TrainConfig, build_bundle, reconstruct
from vad.exceptions import FormatError


@pytest.fixture
def bundle():
    return build_bundle(TrainConfig(d_z=4, hidden=(6, 5), seed=3), 7)


def test_blob_size_arithmetic():
    assert checkpoint.blob_size([50, 100, 300]) == 8 * (50 * 100 + 100 + 100 * 300 + 300)


def test_blob_length_matches_header(tmp_path):
    b = build_bundle(TrainConfig(d_z=50, hidden=(100,)), 300)
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, b)
    raw = path.read_bytes()
    header_end = raw.index(b"\n", raw.index(b"\n") + 1) + 1
    assert len(raw) - header_end == 8 * (50 * 100 + 100 + 100 * 300 + 300)


@pytest.mark.parametrize("kind", ["vad", "vae"])
def test_round_trip_decodes_bitwise(tmp_path, kind):
    b = build_bundle(TrainConfig(model_kind=kind, d_z=4, hidden=(6,), seed=2), 5)
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, b)
    loaded = checkpoint.load(path)
    z = np.random.default_rng(0).normal(size=(100, 4))
    assert reconstruct(loaded, z).tobytes() == reconstruct(b, z).tobytes()
    assert loaded.config == b.config
    if kind == "vae":
        assert all(p.tobytes() == q.tobytes() for p, q in zip(loaded.encoder.params, b.encoder.params))


def test_truncated_blob(tmp_path, bundle):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, bundle)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    expected = 8 * bundle.decoder.n_params()
    with pytest.raises(FormatError, match=f"has {expected - 8} bytes, expected {expected}"):
        checkpoint.load(path)


def test_version_and_magic_errors(tmp_path, bundle):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, bundle)
    raw = path.read_bytes()
    path.write_bytes(raw.replace(b"VADCKPT 1", b"VADCKPT 9", 1))
    with pytest.raises(FormatError, match="version 9"):
        checkpoint.load(path)
    path.write_bytes(b"NOTACKPT\n" + raw)
    with pytest.raises(FormatError, match="byte offset 0"):
        checkpoint.load(path)


def test_header_blob_disagreement(tmp_path, bundle):
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, bundle)
    first, header, blob = path.read_bytes().split(b"\n", 2)
    doc = json.loads(header)
    doc["blob_bytes"] += 8
    path.write_bytes(b"\n".join([first, json.dumps(doc).encode(), blob]))
    with pytest.raises(FormatError, match="blob bytes"):
        checkpoint.load(path)
    del doc["blocks"]
    path.write_bytes(b"\n".join([first, json.dumps(doc).encode(), blob]))
    with pytest.raises(FormatError):
        checkpoint.load(path)
