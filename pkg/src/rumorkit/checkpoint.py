"""Binary weight files and their JSON sidecars.

Byte layout (all integers little-endian, payloads row-major float32):

    offset  size  field
    0       4     magic b"RKCP"
    4       4     format version, uint32 (currently 1)
    8       4     config JSON length, uint32
    12      n     config JSON, UTF-8
    ...     4     entry count, uint32
    per entry:
            2     name length, uint16
            *     name, UTF-8
            1     ndim, uint8
            4*nd  extents, uint32 each
            4*k   payload, float32 little-endian

The sidecar (same path + ".json") records run context that does not belong
in the weight file: config echo, seed, stopping epoch, vocab path.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import RumorKitError
from .tensor import Parameter

MAGIC = b"RKCP"
FORMAT_VERSION = 1


class CheckpointError(RumorKitError):
    """Malformed or truncated weight file."""


def save_parameters(path, params: Sequence[Parameter], config: Mapping) -> None:
    """Write named arrays plus a config echo; float32 regardless of run dtype."""
    blob = json.dumps(dict(config), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for param in params:
            name = param.name.encode()
            data = np.ascontiguousarray(param.data, dtype="<f4")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", data.ndim))
            for extent in data.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(data.tobytes())


def load_parameters(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (config echo, {name: float32 array})."""
    raw = Path(path).read_bytes()
    view = memoryview(raw)
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (config_len,) = struct.unpack_from("<I", view, 8)
    offset = 12
    config = json.loads(bytes(view[offset : offset + config_len]).decode())
    offset += config_len
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4

    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset : offset + name_len]).decode()
        offset += name_len
        (ndim,) = struct.unpack_from("<B", view, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", view, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(view, dtype="<f4", count=size, offset=offset).reshape(shape)
        offset += 4 * size
        arrays[name] = np.ascontiguousarray(data, dtype=np.float32)
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return config, arrays


def save_sidecar(checkpoint_path, payload: Mapping) -> Path:
    sidecar = Path(str(checkpoint_path) + ".json")
    sidecar.write_text(json.dumps(dict(payload), indent=2, sort_keys=True) + "\n")
    return sidecar


def load_sidecar(checkpoint_path) -> dict:
    return json.loads(Path(str(checkpoint_path) + ".json").read_text())
