"""Binary model files.

Layout (little-endian): magic ``FER4DMDL``; u32 format version; u32 model
kind length + kind (utf-8); u32 config length + config (JSON, utf-8); u32
array count; per array: u32 name length, name, u32 ndim, ndim x u32 dims;
then every array's float64 data in header order.
"""

import json
import struct

import numpy as np

from fer4d.errors import ModelFormatError
from fer4d.neural.models import build_model

MAGIC = b"FER4DMDL"
VERSION = 1


def _blob(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dumps(model) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _blob(model.kind)]
    parts.append(_blob(json.dumps(model.config(), sort_keys=True)))
    parts.append(struct.pack("<I", len(model.params)))
    for name, arr in model.params.items():
        parts.append(_blob(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in model.params.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def loads(data: bytes):
    if data[:8] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    pos = 8

    def u32():
        nonlocal pos
        if pos + 4 > len(data):
            raise ModelFormatError("truncated model file")
        (v,) = struct.unpack_from("<I", data, pos)
        pos += 4
        return v

    def text():
        nonlocal pos
        n = u32()
        s = data[pos:pos + n].decode("utf-8")
        pos += n
        return s

    version = u32()
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    kind = text()
    config = json.loads(text())
    headers = []
    for _ in range(u32()):
        name = text()
        ndim = u32()
        headers.append((name, tuple(u32() for _ in range(ndim))))
    model = build_model(kind, config)
    for name, shape in headers:
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count > len(data):
            raise ModelFormatError("truncated model file")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        if name not in model.params or model.params[name].shape != shape:
            raise ModelFormatError(f"unexpected parameter {name} {shape}")
        model.params[name] = arr.astype(np.float64)
    return model


def save_model(path, model) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model))


def load_model(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
