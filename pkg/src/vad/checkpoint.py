"""Checkpoint file format.

Layout::

    VADCKPT <version>\\n
    <one-line JSON header>\\n
    <little-endian float64 parameter blob>

The header echoes the training config, lists every parameter block with its
shapes in blob order (decoder first, then encoder), and states the blob size.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .engine import ModelBundle, TrainConfig
from .exceptions import FormatError
from .models import DecoderMLP, EncoderMLP

MAGIC = b"VADCKPT"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def blob_size(layer_dims) -> int:
    """Bytes taken by a dense stack with the given widths."""
    dims = list(layer_dims)
    return 8 * sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def _header(bundle: ModelBundle) -> dict:
    blocks = [{"name": "decoder", "layer_dims": bundle.decoder.layer_dims,
               "hidden_activation": bundle.decoder.hidden_activation,
               "output_activation": bundle.decoder.output_activation,
               "shapes": [list(p.shape) for p in bundle.decoder.params]}]
    if bundle.encoder is not None:
        enc = bundle.encoder
        blocks.append({"name": "encoder", "d": enc.d, "layer_dims": enc.layer_dims,
                       "hidden_activation": enc.hidden_activation, "use_mask": enc.use_mask,
                       "n_trunk": enc.n_trunk, "shapes": [list(p.shape) for p in enc.params]})
    n_values = sum(int(np.prod(s)) for b in blocks for s in b["shapes"])
    return {
        "format_version": FORMAT_VERSION,
        "config": bundle.config.to_dict(),
        "rng": {"generator": "numpy.PCG64", "seed": bundle.config.seed},
        "blocks": blocks,
        "blob_bytes": 8 * n_values,
    }


def save(path, bundle: ModelBundle) -> None:
    header = json.dumps(_header(bundle), sort_keys=True).encode("utf-8")
    params = list(bundle.decoder.params)
    if bundle.encoder is not None:
        params += bundle.encoder.params
    blob = b"".join(np.ascontiguousarray(p, dtype=_DTYPE).tobytes() for p in params)
    Path(path).write_bytes(MAGIC + b" " + str(FORMAT_VERSION).encode() + b"\n" + header + b"\n" + blob)


def load(path) -> ModelBundle:
    raw = Path(path).read_bytes()
    first_nl = raw.find(b"\n")
    if first_nl < 0 or not raw.startswith(MAGIC + b" "):
        raise FormatError(f"{path}: missing checkpoint magic at byte offset 0")
    try:
        version = int(raw[len(MAGIC) + 1:first_nl])
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable version at byte offset {len(MAGIC) + 1}") from exc
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    second_nl = raw.find(b"\n", first_nl + 1)
    if second_nl < 0:
        raise FormatError(f"{path}: header not terminated (starts at byte offset {first_nl + 1})")
    try:
        header = json.loads(raw[first_nl + 1:second_nl])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad header JSON at byte offset {first_nl + 1 + exc.pos}") from exc

    blob_offset = second_nl + 1
    blob = raw[blob_offset:]
    try:
        shapes = [tuple(int(v) for v in s) for b in header["blocks"] for s in b["shapes"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: header at byte offset {first_nl + 1} lacks valid block "
                          f"shapes: {exc!r}") from exc
    expected = 8 * sum(int(np.prod(s)) for s in shapes)
    if header.get("blob_bytes") != expected:
        raise FormatError(f"{path}: header declares {header.get('blob_bytes')} blob bytes "
                          f"but its shapes need {expected}")
    if len(blob) != expected:
        raise FormatError(f"{path}: parameter blob at byte offset {blob_offset} has {len(blob)} "
                          f"bytes, expected {expected}")

    values = np.frombuffer(blob, dtype=_DTYPE)
    arrays, pos = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(values[pos:pos + size].reshape(shape).astype(np.float64))
        pos += size

    try:
        return _bundle(header, arrays)
    except (KeyError, TypeError, IndexError) as exc:
        raise FormatError(f"{path}: incomplete header at byte offset {first_nl + 1}: {exc!r}") from exc


def _bundle(header: dict, arrays: list[np.ndarray]) -> ModelBundle:
    config = TrainConfig.from_dict(header["config"])
    dec_block = header["blocks"][0]
    n_dec = len(dec_block["shapes"])
    decoder = DecoderMLP(list(dec_block["layer_dims"]), arrays[:n_dec],
                         dec_block["hidden_activation"], dec_block["output_activation"])
    encoder = None
    if len(header["blocks"]) > 1:
        enc = header["blocks"][1]
        encoder = EncoderMLP(enc["d"], list(enc["layer_dims"]), arrays[n_dec:],
                             enc["hidden_activation"], enc["use_mask"], enc["n_trunk"])
    return ModelBundle(config, decoder, encoder)
