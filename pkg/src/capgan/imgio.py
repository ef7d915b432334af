"""Binary image formats: PPM (P6) for color, PGM (P5) for masks and
heatmaps, plus a minimal PNG encoder used by the HTTP service.

Images travel as float arrays, (3, H, W) in [-1, 1] for color and
(H, W) in [0, 1] for grayscale; files are always 8-bit, maxval 255.
"""
from __future__ import annotations

import struct
import zlib

import numpy as np


def image_to_u8(img: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {img.shape}")
    scaled = np.clip(np.rint((img + 1.0) * 127.5), 0, 255)
    return scaled.astype(np.uint8).transpose(1, 2, 0)


def u8_to_image(arr: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float in [-1, 1]."""
    return arr.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0


def gray_to_u8(arr: np.ndarray) -> np.ndarray:
    """(H, W) in [0, 1] -> uint8."""
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def ppm_bytes(img: np.ndarray) -> bytes:
    u8 = image_to_u8(img)
    h, w = u8.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + u8.tobytes()


def pgm_bytes(gray: np.ndarray) -> bytes:
    """Grayscale writer; accepts bool, uint8, or float in [0, 1]."""
    if gray.dtype == bool:
        u8 = np.where(gray, 255, 0).astype(np.uint8)
    elif gray.dtype == np.uint8:
        u8 = gray
    else:
        u8 = gray_to_u8(gray)
    h, w = u8.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + u8.tobytes()


def _parse_header(data: bytes, magic: bytes) -> tuple[int, int, int]:
    """Returns (width, height, offset of pixel data)."""
    if not data.startswith(magic):
        raise ValueError(f"bad magic: expected {magic!r}")
    fields: list[int] = []
    i = len(magic)
    while len(fields) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated header")
        fields.append(int(data[start:i]))
    if fields[2] != 255:
        raise ValueError(f"unsupported maxval {fields[2]}")
    return fields[0], fields[1], i + 1  # single whitespace byte after maxval


def parse_ppm(data: bytes) -> np.ndarray:
    w, h, off = _parse_header(data, b"P6")
    need = w * h * 3
    raw = data[off : off + need]
    if len(raw) != need:
        raise ValueError("truncated pixel data")
    return u8_to_image(np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3))


def parse_pgm(data: bytes) -> np.ndarray:
    """Returns (H, W) float in [0, 1]."""
    w, h, off = _parse_header(data, b"P5")
    need = w * h
    raw = data[off : off + need]
    if len(raw) != need:
        raise ValueError("truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def png_bytes(img: np.ndarray) -> bytes:
    """8-bit RGB PNG, filter 0 scanlines, single IDAT."""
    u8 = image_to_u8(img)
    h, w = u8.shape[:2]

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
        )

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    scanlines = b"".join(b"\x00" + u8[y].tobytes() for y in range(h))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(scanlines, 9))
        + chunk(b"IEND", b"")
    )
