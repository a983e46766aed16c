"""Binary 8-bit PGM (P5) masks: 0 is background, anything else foreground."""

import numpy as np

from .errors import PGMFormatError

_WHITESPACE = b" \t\n\r\v\f"


def _tokens(data, count):
    """First ``count`` header tokens and the offset of the raster data."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i] in _WHITESPACE:
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] not in b"\r\n":
                i += 1
            continue
        start = i
        while i < n and data[i] not in _WHITESPACE and data[i] != ord("#"):
            i += 1
        if start == i:
            raise PGMFormatError("truncated PGM header")
        tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    if i >= n or data[i] not in _WHITESPACE:
        raise PGMFormatError("missing whitespace after PGM header")
    return tokens, i + 1


def read_header(data):
    """Parse ``(width, height, maxval, offset)`` from raw P5 bytes."""
    tokens, offset = _tokens(data, 4)
    if tokens[0] != b"P5":
        raise PGMFormatError(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMFormatError(f"non-integer PGM header field: {exc}") from None
    if width <= 0 or height <= 0:
        raise PGMFormatError(f"invalid PGM size {width}x{height}")
    if not 0 < maxval < 256:
        raise PGMFormatError(f"only 8-bit PGM is supported (maxval {maxval})")
    return width, height, maxval, offset


def read_pgm(path):
    """Pixel values of an 8-bit P5 file as a ``(height, width)`` uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, _, offset = read_header(data)
    raster = data[offset : offset + width * height]
    if len(raster) != width * height:
        raise PGMFormatError(
            f"{path}: expected {width * height} pixel bytes, found {len(raster)}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def read_mask(path):
    return read_pgm(path) != 0


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(np.where(mask, 255, 0).astype(np.uint8).tobytes())
