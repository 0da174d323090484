"""Binary checkpoint container.

Layout (all integers unsigned 32-bit little-endian):

    magic "SGNT" | version | entry count
    per entry: name length | UTF-8 name | rank | dims... | payload

Tensor payloads are raw little-endian float32. The single entry named
"config" carries the architecture / pipeline description as a UTF-8
key=value document; its dims hold the byte length and its payload is the
raw text. Optimizer state tensors use an "opt/" name prefix.

Writes are atomic (temp file + rename).
"""

import os
import struct

import numpy as np

MAGIC = b"SGNT"
VERSION = 1
CONFIG_ENTRY = "config"


class CheckpointError(Exception):
    pass


def _u32(value):
    return struct.pack("<I", value)


def save_checkpoint(path, arrays, config_text):
    """Write named float arrays plus the config document."""
    blobs = [MAGIC, _u32(VERSION), _u32(len(arrays) + 1)]

    def entry(name, dims, payload):
        raw = name.encode("utf-8")
        blobs.append(_u32(len(raw)))
        blobs.append(raw)
        blobs.append(_u32(len(dims)))
        for d in dims:
            blobs.append(_u32(int(d)))
        blobs.append(payload)

    text = config_text.encode("utf-8")
    entry(CONFIG_ENTRY, (len(text),), text)
    for name, arr in arrays.items():
        if name == CONFIG_ENTRY:
            raise CheckpointError(f"tensor name {CONFIG_ENTRY!r} is reserved")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entry(name, arr.shape, arr.tobytes())

    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays dict, config text)."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    count = r.u32()
    arrays = {}
    config_text = None
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = tuple(r.u32() for _ in range(rank))
        if name == CONFIG_ENTRY:
            config_text = r.take(dims[0] if dims else 0).decode("utf-8")
        else:
            n = int(np.prod(dims, dtype=np.int64)) if dims else 1
            payload = r.take(n * 4)
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes")
    if config_text is None:
        raise CheckpointError(f"{path}: missing config entry")
    return arrays, config_text
