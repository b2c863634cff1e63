"""Binary NetPBM (P5 grayscale / P6 RGB, maxval 255) reading and writing.

Images are float arrays shaped ``[C, H, W]`` with values in [0, 1].
Writing quantizes with ``round(v * 255)``; reading divides by 255, so any
array already on the k/255 grid round-trips bit-exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    pass


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens, skipping # comments."""
    toks, pos, n = [], 0, len(buf)
    while len(toks) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise NetpbmError(f"malformed header: expected {count} fields, found {len(toks)} before byte {pos}")
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        toks.append(buf[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise NetpbmError(f"malformed header: missing whitespace after maxval at byte {pos}")
    return toks, pos + 1


def decode(buf: bytes) -> np.ndarray:
    toks, offset = _tokens(buf, 4)
    magic = toks[0]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise NetpbmError(f"unsupported magic {magic!r}; only P5 and P6 are read")
    try:
        width, height, maxval = (int(t) for t in toks[1:])
    except ValueError:
        raise NetpbmError(f"malformed header: non-integer field in {toks[1:]}") from None
    if width <= 0 or height <= 0:
        raise NetpbmError(f"malformed header: bad dimensions {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"unsupported maxval {maxval}; only 255 is supported")
    need = width * height * channels
    have = len(buf) - offset
    if have < need:
        raise NetpbmError(
            f"truncated payload: raster starts at byte {offset}, needs {need} bytes, "
            f"data ends at byte {len(buf)}"
        )
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset)
    img = raster.reshape(height, width, channels).transpose(2, 0, 1)
    return img.astype(np.float64) / 255.0


def encode(image) -> bytes:
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise NetpbmError(f"expected [1|3, H, W] image, got shape {a.shape}")
    c, h, w = a.shape
    q = np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n255\n".encode("ascii")
    return header + q.transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        return decode(path.read_bytes())
    except NetpbmError as exc:
        raise NetpbmError(f"{path}: {exc}") from None


def write_image(path, image) -> None:
    Path(path).write_bytes(encode(image))


def quantize(image) -> np.ndarray:
    """Snap values to the 8-bit grid that :func:`write_image` stores."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0) / 255.0
