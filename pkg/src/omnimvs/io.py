"""Raster and blob file formats: binary PGM/PPM, little-endian PFM, raw float32 blobs."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    pass


def _read_header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte before the raster


def write_pgm(path, image) -> None:
    """Write an 8-bit grayscale binary PGM (P5). Float input in [0, 1] is quantized."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = to_uint8(image)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(image).tobytes())


def write_ppm(path, image) -> None:
    """Write an 8-bit RGB binary PPM (P6)."""
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = to_uint8(image)
    h, w, c = image.shape
    if c != 3:
        raise FormatError("PPM needs 3 channels")
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(image).tobytes())


def read_pnm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM")
    (w, h, maxval), pos = _read_header_tokens(buf[2:], 3)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit rasters are supported")
    channels = 1 if magic == b"P5" else 3
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * channels, offset=2 + pos)
    return data.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


read_pgm = read_pnm


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_pfm(path, data) -> None:
    """Write a single-channel little-endian PFM; rows are stored bottom-to-top."""
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise FormatError("PFM writer takes 2-D rasters")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"Pf":
        raise FormatError(f"{path}: not a single-channel PFM")
    (w, h, scale), pos = _read_header_tokens(buf[2:], 3)
    w, h, scale = int(w), int(h), float(scale)
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=2 + pos).reshape(h, w)
    return data[::-1].astype(np.float32)


_BLOB_MAGIC = b"OMVSBLOB"


def write_blob(path, header: dict, arrays: list[np.ndarray]) -> None:
    """JSON header plus raw little-endian float32 arrays.

    Layout: magic, uint32 header length, UTF-8 JSON, then the arrays back to
    back. Shapes are recorded in the header under ``"arrays"``.
    """
    header = dict(header)
    header["arrays"] = [list(a.shape) for a in arrays]
    text = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_BLOB_MAGIC)
        f.write(struct.pack("<I", len(text)))
        f.write(text)
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_blob(path) -> tuple[dict, list[np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != _BLOB_MAGIC:
        raise FormatError(f"{path}: bad magic")
    (n,) = struct.unpack("<I", buf[8:12])
    header = json.loads(buf[12:12 + n])
    pos = 12 + n
    arrays = []
    for shape in header["arrays"]:
        count = int(np.prod(shape))
        a = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
        arrays.append(a.astype(np.float32))
        pos += 4 * count
    if pos != len(buf):
        raise FormatError(f"{path}: trailing bytes")
    return header, arrays
