"""Minimal PNG and PFM readers/writers.

PNG: 8-bit RGB, written with filter type 0 and a pinned zlib level so
identical arrays always produce identical bytes. The reader handles all
five standard filters plus RGBA input (alpha dropped).

PFM: float32 "portable float map", grayscale (Pf) or color (PF), rows
stored bottom-up, negative scale marking little-endian. Lossless for
float32 data; used for masks and depth maps.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_ZLIB_LEVEL = 6


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float image to uint8."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))


def write_png(path: str, img: np.ndarray) -> None:
    """Write an RGB image; float input in [0, 1] is quantized to 8 bits."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"write_png: expected [H, W, 3], got {arr.shape}")
    h, w = arr.shape[:2]
    raw = b"".join(b"\x00" + arr[row].tobytes() for row in range(h))
    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as fh:
        fh.write(_PNG_SIGNATURE)
        fh.write(_png_chunk(b"IHDR", header))
        fh.write(_png_chunk(b"IDAT", zlib.compress(raw, _ZLIB_LEVEL)))
        fh.write(_png_chunk(b"IEND", b""))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, h: int, w: int, channels: int) -> np.ndarray:
    stride = w * channels
    out = np.zeros((h, stride), dtype=np.uint8)
    pos = 0
    for row in range(h):
        ftype = raw[pos]
        pos += 1
        line = bytearray(raw[pos:pos + stride])
        pos += stride
        prev = out[row - 1] if row else np.zeros(stride, dtype=np.uint8)
        if ftype == 0:
            pass
        elif ftype == 1:
            for i in range(channels, stride):
                line[i] = (line[i] + line[i - channels]) & 0xFF
        elif ftype == 2:
            for i in range(stride):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:
            for i in range(stride):
                left = line[i - channels] if i >= channels else 0
                line[i] = (line[i] + ((left + int(prev[i])) >> 1)) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                left = line[i - channels] if i >= channels else 0
                upleft = int(prev[i - channels]) if i >= channels else 0
                line[i] = (line[i] + _paeth(left, int(prev[i]), upleft)) & 0xFF
        else:
            raise ValueError(f"read_png: unsupported filter type {ftype}")
        out[row] = np.frombuffer(bytes(line), dtype=np.uint8)
    return out.reshape(h, w, channels)


def read_png(path: str) -> np.ndarray:
    """Read an 8-bit RGB(A) PNG into a float64 [H, W, 3] array in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _PNG_SIGNATURE:
        raise ValueError(f"read_png: {path} is not a PNG file")
    pos = 8
    width = height = None
    channels = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos:pos + 4])
        tag = blob[pos + 4:pos + 8]
        payload = blob[pos + 8:pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, color = struct.unpack(">IIBB", payload[:10])
            if depth != 8 or color not in (2, 6):
                raise ValueError("read_png: only 8-bit RGB/RGBA is supported")
            channels = 3 if color == 2 else 4
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    raw = zlib.decompress(idat)
    pixels = _unfilter(raw, height, width, channels)
    return from_uint8(pixels[:, :, :3])


def write_pfm(path: str, data: np.ndarray) -> None:
    """Write float32 data ([H, W] grayscale or [H, W, 3] color)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"write_pfm: expected [H, W] or [H, W, 3], got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")  # negative scale: little-endian payload
        fh.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path: str) -> np.ndarray:
    """Read a PFM file into float64 (values remain float32-exact)."""
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise ValueError(f"read_pfm: {path} is not a PFM file")
        w, h = (int(tok) for tok in fh.readline().split())
        scale = float(fh.readline())
        count = w * h * (3 if tag == b"PF" else 1)
        dtype = "<f4" if scale < 0 else ">f4"
        flat = np.frombuffer(fh.read(count * 4), dtype=dtype, count=count)
    shape = (h, w, 3) if tag == b"PF" else (h, w)
    return np.flipud(flat.reshape(shape)).astype(np.float64)
