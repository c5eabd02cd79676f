"""Image file I/O: PNG (8/16-bit gray/RGB) and binary PPM/PGM readers,
8-bit PNG writer.

The codec is self-contained on top of zlib.  Reading normalizes to
float64 in [0, 1] (max code value maps to 1.0); writing clamps to [0, 1]
and quantizes with round-half-up.  Alpha, palette and interlaced PNGs
are out of scope and rejected.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .image import as_image

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Unreadable or unsupported image file."""


def _png_chunks(data: bytes):
    pos = 8
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        ctype = data[pos + 4:pos + 8]
        body = data[pos + 8:pos + 8 + length]
        if len(body) != length:
            raise ImageFormatError("truncated PNG chunk")
        yield ctype, body
        pos += 12 + length
        if ctype == b"IEND":
            return
    raise ImageFormatError("missing IEND chunk")


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    if len(raw) != height * (stride + 1):
        raise ImageFormatError("PNG pixel data has wrong length")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(height, stride + 1)
    out = np.zeros((height, stride), dtype=np.uint8)
    for y in range(height):
        ftype = int(rows[y, 0])
        line = rows[y, 1:].copy()
        prev = out[y - 1] if y > 0 else np.zeros(stride, dtype=np.uint8)
        if ftype == 0:
            out[y] = line
        elif ftype == 1:  # Sub: per-byte-phase running sum, wraps mod 256
            for p in range(bpp):
                out[y, p::bpp] = np.cumsum(line[p::bpp], dtype=np.uint8)
        elif ftype == 2:  # Up
            out[y] = line + prev
        elif ftype == 3:  # Average
            row = out[y]
            for i in range(stride):
                left = int(row[i - bpp]) if i >= bpp else 0
                row[i] = (int(line[i]) + ((left + int(prev[i])) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            row = out[y]
            for i in range(stride):
                left = int(row[i - bpp]) if i >= bpp else 0
                ul = int(prev[i - bpp]) if i >= bpp else 0
                row[i] = (int(line[i]) + _paeth(left, int(prev[i]), ul)) & 0xFF
        else:
            raise ImageFormatError(f"unknown PNG filter type {ftype}")
    return out


def _load_png(data: bytes) -> np.ndarray:
    width = height = depth = ctype = None
    idat = []
    for name, body in _png_chunks(data):
        if name == b"IHDR":
            width, height, depth, ctype, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", body)
            if comp != 0 or filt != 0:
                raise ImageFormatError("unsupported PNG compression/filter method")
            if interlace != 0:
                raise ImageFormatError("interlaced PNG is not supported")
            if depth not in (8, 16):
                raise ImageFormatError(f"unsupported PNG bit depth {depth}")
            if ctype not in (0, 2):
                raise ImageFormatError(
                    f"unsupported PNG color type {ctype} (gray or RGB only)")
        elif name == b"IDAT":
            idat.append(body)
        elif name == b"IEND":
            break
    if width is None or not idat:
        raise ImageFormatError("PNG missing IHDR or IDAT")
    channels = 1 if ctype == 0 else 3
    bpp = channels * (depth // 8)
    stride = width * bpp
    raw = zlib.decompress(b"".join(idat))
    plane = _unfilter(raw, height, stride, bpp)
    if depth == 8:
        arr = plane.reshape(height, width, channels).astype(np.float64) / 255.0
    else:
        arr = plane.reshape(height, stride).view(">u2").reshape(height, width, channels)
        arr = arr.astype(np.float64) / 65535.0
    return arr


def _load_pnm(data: bytes) -> np.ndarray:
    # binary PGM (P5) / PPM (P6); maxval up to 65535 (two-byte big-endian)
    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise ImageFormatError("truncated PNM header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"bad PNM header: {exc}") from None
    if not (0 < maxval < 65536):
        raise ImageFormatError(f"bad PNM maxval {maxval}")
    channels = 3 if data[:2] == b"P6" else 1
    count = width * height * channels
    if maxval > 255:
        body = np.frombuffer(data, dtype=">u2", count=count, offset=pos)
    else:
        body = np.frombuffer(data, dtype=np.uint8, count=count, offset=pos)
    if body.size != count:
        raise ImageFormatError("truncated PNM pixel data")
    return body.reshape(height, width, channels).astype(np.float64) / maxval


def load_image(path) -> np.ndarray:
    """Load a PNG or binary PPM/PGM file as a float64 image in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:8] == _PNG_SIG:
        return _load_png(data)
    if data[:2] in (b"P5", b"P6"):
        return _load_pnm(data)
    raise ImageFormatError(f"{path}: not a PNG or binary PPM/PGM file")


def _chunk(name: bytes, body: bytes) -> bytes:
    crc = zlib.crc32(name + body) & 0xFFFFFFFF
    return struct.pack(">I", len(body)) + name + body + struct.pack(">I", crc)


def save_image(image: np.ndarray, path) -> None:
    """Write an 8-bit PNG; values are clamped to [0, 1], round-half-up."""
    image = as_image(image)
    codes = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w, c = codes.shape
    ctype = 0 if c == 1 else 2
    ihdr = struct.pack(">IIBBBBB", w, h, 8, ctype, 0, 0, 0)
    rows = np.concatenate(
        [np.zeros((h, 1), dtype=np.uint8), codes.reshape(h, w * c)], axis=1)
    idat = zlib.compress(rows.tobytes(), 6)
    blob = _PNG_SIG + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")
    Path(path).write_bytes(blob)
