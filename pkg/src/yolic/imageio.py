"""Bit-exact, dependency-free image I/O: binary PPM (P6) for images and
binary PGM (P5) for class-id masks. PNG read/write is available when Pillow
is installed (the ``png`` extra)."""

from __future__ import annotations

import numpy as np

__all__ = [
    "write_ppm",
    "read_ppm",
    "write_pgm",
    "read_pgm",
    "read_image_any",
    "png_supported",
]


def write_ppm(image: np.ndarray) -> bytes:
    """H x W x 3 float image in [0,1] -> binary P6 bytes (8-bit)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got {image.shape}")
    h, w = image.shape[:2]
    u8 = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + u8.tobytes()


def write_pgm(ids: np.ndarray) -> bytes:
    """H x W uint8 raster -> binary P5 bytes."""
    arr = np.asarray(ids, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"expected H x W raster, got {arr.shape}")
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def _parse_pnm_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file")
    # header = magic, width, height, maxval as whitespace/comment-separated tokens
    tokens = []
    pos = len(magic)
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"only 8-bit rasters supported (maxval {maxval})")
    return w, h, pos


def read_ppm(data: bytes) -> np.ndarray:
    """Binary P6 bytes -> H x W x 3 float32 image in [0,1]."""
    w, h, pos = _parse_pnm_header(data, b"P6")
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise ValueError(f"P6 payload has {len(body)} bytes, expected {w * h * 3}")
    u8 = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return (u8.astype(np.float32) / 255.0).copy()


def read_pgm(data: bytes) -> np.ndarray:
    """Binary P5 bytes -> H x W uint8 raster."""
    w, h, pos = _parse_pnm_header(data, b"P5")
    body = data[pos : pos + w * h]
    if len(body) != w * h:
        raise ValueError(f"P5 payload has {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def png_supported() -> bool:
    try:
        import PIL.Image  # noqa: F401
    except ImportError:
        return False
    return True


def read_image_any(path) -> np.ndarray:
    """Read .ppm directly; anything else goes through Pillow when present."""
    raw = open(path, "rb").read()
    if raw.startswith(b"P6"):
        return read_ppm(raw)
    if not png_supported():
        raise ValueError(f"{path}: only PPM (P6) is supported without the png extra")
    import PIL.Image

    with PIL.Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"))
    return rgb.astype(np.float32) / 255.0
