"""Binary PPM (P6) image I/O, maxval 255.

Channels quantize as round(clamp(v, 0, 1) * 255); reading divides back by
255, so write-read-write is byte identical.
"""

from __future__ import annotations

import numpy as np

from .core import ImageBuffer
from .errors import InvalidInputError


def ppm_bytes(image: ImageBuffer) -> bytes:
    w, h = image.resolution
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    quantized = np.rint(np.clip(image.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    return header + quantized.tobytes()


def write_ppm(path, image: ImageBuffer) -> None:
    with open(path, "wb") as fh:
        fh.write(ppm_bytes(image))


def read_ppm(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_ppm(data)


def parse_ppm(data: bytes) -> ImageBuffer:
    if not data.startswith(b"P6"):
        raise InvalidInputError("not a binary PPM (P6) file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
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
            raise InvalidInputError("truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = int(fields[0]), int(fields[1]), int(fields[2])
    except ValueError as exc:
        raise InvalidInputError(f"malformed PPM header fields {fields}") from exc
    if maxval != 255:
        raise InvalidInputError(f"unsupported PPM maxval {maxval}")
    expected = width * height * 3
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise InvalidInputError(f"PPM payload has {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3).astype(np.float64) / 255.0
    return ImageBuffer(arr)


def grayscale_image(values: np.ndarray, scale: float) -> ImageBuffer:
    """Visualize a scalar field as a gray PPM-ready image; values scaled
    into [0, 1] by the given factor."""
    norm = np.clip(values / scale, 0.0, 1.0) if scale > 0 else np.zeros_like(values)
    return ImageBuffer(np.repeat(norm[:, :, None], 3, axis=2))
