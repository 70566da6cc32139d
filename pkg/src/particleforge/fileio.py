"""Atomic file writing plus the PNG and float-map formats.

Float maps use a 16-byte header: magic "PFMAPS01", then width and height
as little-endian u32, followed by row-major float32 samples.
"""

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

FLOAT_MAP_MAGIC = b"PFMAPS01"


def _atomic_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, doc) -> None:
    _atomic_bytes(path, (json.dumps(doc, indent=2) + "\n").encode("utf-8"))


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_png(path, image: np.ndarray) -> None:
    """Write an 8-bit grayscale PNG atomically."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise ValueError("expected a 2D uint8 array")
    import io
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    _atomic_bytes(path, buf.getvalue())


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_float_map(path, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError("expected a 2D array")
    height, width = arr.shape
    header = FLOAT_MAP_MAGIC + struct.pack("<II", width, height)
    _atomic_bytes(path, header + arr.tobytes())


def read_float_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:8] != FLOAT_MAP_MAGIC:
            raise ValueError(f"{path}: not a float-map file")
        width, height = struct.unpack("<II", header[8:])
        payload = fh.read()
    expect = width * height * 4
    if len(payload) != expect:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    return np.frombuffer(payload, dtype=np.float32).reshape(height, width).copy()
