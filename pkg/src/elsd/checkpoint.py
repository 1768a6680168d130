"""Checkpoint directory: ``params.bin`` (shape-headed little-endian float64 blocks)
plus ``manifest.json`` (format tag, layer names and shapes, free-form config).

params.bin layout::

    b"ELSDPAR1"  u32 count
    repeat count times:
        u32 name_len, name (utf-8), u32 ndim, u32 dims[ndim], f64 data[prod(dims)]
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ELSDPAR1"
FORMAT = "elsd-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: dict[str, np.ndarray], config: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    names = sorted(state)
    chunks = [MAGIC, struct.pack("<I", len(names))]
    layers = []
    for name in names:
        arr = np.asarray(state[name], dtype="<f8")  # tobytes() is C order; keeps 0-d shapes
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
        layers.append({"name": name, "shape": list(arr.shape)})
    (path / "params.bin").write_bytes(b"".join(chunks))
    manifest = {"format": FORMAT, "version": VERSION, "layers": layers, "config": config or {}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    mpath, bpath = path / "manifest.json", path / "params.bin"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise CheckpointError(f"{mpath}: missing manifest") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{mpath}: invalid JSON ({e})") from None
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointError(f"{mpath}: unsupported checkpoint format/version")
    buf = bpath.read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{bpath}: bad magic bytes")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{bpath}: truncated file")
        out = buf[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise CheckpointError(f"{bpath}: trailing bytes")
    expected = {l["name"]: tuple(l["shape"]) for l in manifest["layers"]}
    got = {k: v.shape for k, v in state.items()}
    if expected != got:
        raise CheckpointError(f"{path}: manifest does not match parameter blocks")
    return state, manifest.get("config", {})
