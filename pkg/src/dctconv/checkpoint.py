"""Checkpoint directories: ``config.json``, ``params.bin`` and ``masks.json``.

``params.bin`` layout, all integers and floats little-endian::

    magic      8 bytes   b"DCTCKPT1"
    count      uint32    number of tensors
    then per tensor, in model order:
      name_len uint16
      name     name_len bytes, UTF-8 (e.g. "L03/coefficients")
      ndim     uint8
      shape    ndim x uint64
      data     prod(shape) x float64, C order

``masks.json`` maps each spectral layer to its ``{"shape", "p", "seed"}``
triple; masks are redrawn from it on load, never stored bitwise.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .dct_conv import SwitchOffMask
from .model_builder import Model, ModelConfig, build_model

MAGIC = b"DCTCKPT1"


class CheckpointError(ValueError):
    """Missing or malformed checkpoint."""


def write_params(state: dict, path):
    parts = [MAGIC, struct.pack("<I", len(state))]
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_params(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter file (bad magic)")
    try:
        (count,), pos = struct.unpack_from("<I", buf, 8), 12
        state = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (ndim,) = struct.unpack_from("<B", buf, pos)
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos + 1)
            pos += 1 + 8 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 8
            if pos + size > len(buf):
                raise CheckpointError(f"{path}: tensor {name!r} truncated")
            state[name] = np.frombuffer(buf, "<f8", size // 8, pos).reshape(shape).astype(np.float64)
            pos += size
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated header ({e})") from None
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return state


def save_checkpoint(model: Model, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(model.config.to_dict(), indent=2) + "\n")
    write_params(model.state_dict(), d / "params.bin")
    (d / "masks.json").write_text(json.dumps(model.masks(), indent=2, sort_keys=True) + "\n")
    return d


def load_checkpoint(directory) -> Model:
    d = Path(directory)
    for f in ("config.json", "params.bin", "masks.json"):
        if not (d / f).is_file():
            raise CheckpointError(f"checkpoint {d} has no {f}")
    config = ModelConfig.from_dict(json.loads((d / "config.json").read_text()))
    model = build_model(config, init=False)
    masks = json.loads((d / "masks.json").read_text())
    for layer in model.spectral_layers():
        if layer.name not in masks:
            raise CheckpointError(f"masks.json has no entry for {layer.name}")
        m = SwitchOffMask.from_json(masks[layer.name])
        if m.shape != layer.mask.shape:
            raise CheckpointError(f"{layer.name}: mask shape {m.shape} != {layer.mask.shape}")
        layer.mask = m
        layer.weight.mask = m.bits
    model.load_state_dict(read_params(d / "params.bin"))
    return model
