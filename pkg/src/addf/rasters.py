"""Raster interchange: binary/ASCII PGM and plain CSV matrices.

Images are returned as 2-D float64 arrays of shape (height, width) with
intensities mapped linearly from [0, maxval] onto [0, 1].
"""
from __future__ import annotations

import os
import re

import numpy as np

_WS = b" \t\r\n\v\f"


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Pull `count` whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset of the first byte after the single
    whitespace character that terminates the last token.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos] in _WS:
            pos += 1
        if pos < n and data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise ValueError("truncated PGM header")
        start = pos
        while pos < n and data[pos] not in _WS and data[pos] != ord("#"):
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def parse_pgm(data: bytes) -> np.ndarray:
    if len(data) < 2 or data[:2] not in (b"P2", b"P5"):
        raise ValueError("not a PGM file (expected P2 or P5 magic)")
    magic = data[:2]
    tokens, offset = _header_tokens(data[2:], 3)
    offset += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ValueError(f"malformed PGM header: {tokens!r}") from exc
    if width <= 0 or height <= 0:
        raise ValueError(f"PGM dimensions must be positive, got {width}x{height}")
    if not 0 < maxval < 65536:
        raise ValueError(f"PGM maxval must be in [1, 65535], got {maxval}")

    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        body = data[offset:offset + need]
        if len(body) < need:
            raise ValueError(f"PGM pixel data truncated: {len(body)} of {need} bytes")
        values = np.frombuffer(body, dtype=dtype).astype(np.int64)
    else:
        text = re.sub(rb"#[^\r\n]*", b" ", data[offset - 1:])
        words = text.split()
        if len(words) < count:
            raise ValueError(f"PGM pixel data truncated: {len(words)} of {count} samples")
        try:
            values = np.array([int(w) for w in words[:count]], dtype=np.int64)
        except ValueError as exc:
            raise ValueError("non-integer sample in ASCII PGM") from exc
    if values.min() < 0 or values.max() > maxval:
        raise ValueError("PGM sample outside [0, maxval]")
    return (values.astype(np.float64) / maxval).reshape(height, width)


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def encode_pgm(img: np.ndarray, maxval: int = 255, binary: bool = True) -> bytes:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("expected a non-empty 2-D image")
    if maxval not in (255, 65535):
        raise ValueError("maxval must be 255 or 65535")
    height, width = img.shape
    levels = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.int64)
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        header = f"P5\n{width} {height}\n{maxval}\n".encode()
        return header + levels.astype(dtype).tobytes()
    rows = "\n".join(" ".join(str(v) for v in row) for row in levels)
    return f"P2\n{width} {height}\n{maxval}\n{rows}\n".encode()


def write_pgm(path: str | os.PathLike, img: np.ndarray, maxval: int = 255,
              binary: bool = True) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(img, maxval=maxval, binary=binary))


def read_csv_matrix(path: str | os.PathLike) -> np.ndarray:
    mat = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if mat.size == 0:
        raise ValueError(f"{path}: empty matrix")
    return mat


def read_raster(path: str | os.PathLike) -> np.ndarray:
    """Read a PGM, or a CSV matrix when the file ends in .csv."""
    if str(path).lower().endswith(".csv"):
        return read_csv_matrix(path)
    return read_pgm(path)
