"""Binary PGM (P5) and PPM (P6) readers/writers.

Values map linearly between [0, 1] floats and integer samples at the declared
maxval (255 or 65535; 16-bit samples are big-endian per the format).
"""

import numpy as np


class NetpbmParseError(ValueError):
    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.offset = offset


def _read_header(buf, path, expect_magic):
    pos = 0

    def skip_ws():
        nonlocal pos
        while pos < len(buf):
            if buf[pos : pos + 1].isspace():
                pos += 1
            elif buf[pos : pos + 1] == b"#":
                while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break

    def token():
        nonlocal pos
        skip_ws()
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise NetpbmParseError(path, start, "unexpected end of header")
        return buf[start:pos]

    magic = token()
    if magic != expect_magic:
        raise NetpbmParseError(path, 0, f"expected magic {expect_magic.decode()}, got {magic!r}")
    fields = []
    for name in ("width", "height", "maxval"):
        tok = token()
        try:
            fields.append(int(tok))
        except ValueError:
            raise NetpbmParseError(path, pos, f"non-numeric {name}: {tok!r}") from None
    width, height, maxval = fields
    if maxval not in (255, 65535):
        raise NetpbmParseError(path, pos, f"unsupported maxval {maxval}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise NetpbmParseError(path, pos, "missing whitespace before raster")
    pos += 1
    return width, height, maxval, pos


def _read_raster(buf, path, pos, count, maxval):
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype(np.uint8)
    need = count * dtype.itemsize
    if len(buf) - pos < need:
        raise NetpbmParseError(path, len(buf), f"raster truncated: need {need} bytes")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.float64) / maxval


def load_pgm(path):
    """Read a P5 file into a (H, W) float array in [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    w, h, maxval, pos = _read_header(buf, path, b"P5")
    return _read_raster(buf, path, pos, w * h, maxval).reshape(h, w)


def load_ppm(path):
    """Read a P6 file into a (3, H, W) float array in [0, 1]."""
    with open(path, "rb") as f:
        buf = f.read()
    w, h, maxval, pos = _read_header(buf, path, b"P6")
    flat = _read_raster(buf, path, pos, 3 * w * h, maxval)
    return np.ascontiguousarray(flat.reshape(h, w, 3).transpose(2, 0, 1))


def _quantize(arr, maxval):
    q = np.rint(np.clip(arr, 0.0, 1.0) * maxval)
    return q.astype(">u2" if maxval == 65535 else np.uint8)


def save_pgm(path, arr, maxval=255):
    """Write a (H, W) float array in [0, 1] as P5."""
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(_quantize(arr, maxval).tobytes())


def save_ppm(path, arr, maxval=255):
    """Write a (3, H, W) float array in [0, 1] as P6."""
    _, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n%d\n" % (w, h, maxval))
        f.write(_quantize(arr.transpose(1, 2, 0), maxval).tobytes())
