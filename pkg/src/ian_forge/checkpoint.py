"""KGAN1 checkpoint files.

Layout (all integers little-endian)::

    b"KGAN1"
    repeated per tensor:
        u16 name length, name bytes (UTF-8)
        u8  ndim, u32 dim[ndim]
        float32 payload, row-major
    u32 CRC32 of everything before it

Networks are stored as ``"<net>/<tensor>"`` entries plus small metadata
tensors (``"<net>/.kind"``, ``"<net>/.feat"``, ``"<net>/<part>.spec"``) so a
file is self-describing.
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .models import ACTIVATION_CODES, KINDS, MlpSpec, NetworkParams
from .numcore import Tensor

MAGIC = b"KGAN1"
_ACT_NAMES = {v: k for k, v in ACTIVATION_CODES.items()}


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} cannot be encoded")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 4 or not blob.startswith(MAGIC):
        raise CheckpointError("not a KGAN1 file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("CRC mismatch")
    tensors: dict[str, np.ndarray] = {}
    pos = len(MAGIC)
    try:
        while pos < len(body):
            (n,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (ndim,) = struct.unpack_from("<B", body, pos)
            shape = struct.unpack_from(f"<{ndim}I", body, pos + 1)
            pos += 1 + 4 * ndim
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * count > len(body):
                raise CheckpointError(f"truncated payload for {name!r}")
            tensors[name] = np.frombuffer(body, "<f4", count, pos).reshape(shape).astype(np.float64)
            pos += 4 * count
    except struct.error as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    return tensors


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(tensors))
    os.replace(tmp, path)


def read_tensors(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def network_to_tensors(net: NetworkParams) -> dict[str, np.ndarray]:
    out = {f"{net.name}/.kind": np.array([KINDS.index(net.kind)], dtype=np.float64)}
    if net.feature_layers:
        out[f"{net.name}/.feat"] = np.array(net.feature_layers, dtype=np.float64)
    for part, spec in net.parts.items():
        codes = [ACTIVATION_CODES[a] for a in spec.activations]
        out[f"{net.name}/{part}.spec"] = np.array(list(spec.widths) + codes, dtype=np.float64)
    for k, t in net.tensors.items():
        out[f"{net.name}/{k}"] = t.data
    return out


def network_names(tensors: dict[str, np.ndarray]) -> list[str]:
    return [k[: -len("/.kind")] for k in tensors if k.endswith("/.kind")]


def network_from_tensors(tensors: dict[str, np.ndarray], name: str, trainable: bool = True) -> NetworkParams:
    key = f"{name}/.kind"
    if key not in tensors:
        raise CheckpointError(f"network {name!r} not in checkpoint (has {network_names(tensors)})")
    kind = KINDS[int(tensors[key][0])]
    feat = tuple(int(v) for v in tensors.get(f"{name}/.feat", ()))
    parts: dict[str, MlpSpec] = {}
    prefix = f"{name}/"
    for k, v in tensors.items():
        if k.startswith(prefix) and k.endswith(".spec"):
            vals = [int(x) for x in v]
            n = (len(vals) + 1) // 2
            parts[k[len(prefix):-len(".spec")]] = MlpSpec(tuple(vals[:n]), tuple(_ACT_NAMES[c] for c in vals[n:]))
    net_tensors = {}
    for part, spec in parts.items():
        for i, (a, b) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
            for suffix, shape in (("W", (a, b)), ("b", (b,))):
                tk = f"{prefix}{part}.{i}.{suffix}"
                if tk not in tensors or tensors[tk].shape != shape:
                    raise CheckpointError(f"{tk}: missing or wrong shape")
                net_tensors[f"{part}.{i}.{suffix}"] = Tensor(tensors[tk].copy(), trainable)
    return NetworkParams(name, kind, parts, net_tensors, 0, feat)


def save_networks(path, *nets: NetworkParams, extra: dict[str, np.ndarray] | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    for net in nets:
        tensors.update(network_to_tensors(net))
    tensors.update(extra or {})
    write_tensors(path, tensors)


def load_network(path, name: str, trainable: bool = True) -> NetworkParams:
    return network_from_tensors(read_tensors(path), name, trainable)
