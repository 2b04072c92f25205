"""Binary file formats.

PQUAD (``.pquad``)::

    "PQD1"                      4 bytes magic
    height, width, channels     u32 little-endian each (channels 1 or 3)
    planes                      0, 45, 90, 135 deg in order; each plane
                                channel-major then row-major, float32 LE

Checkpoint (``PCKPT1``)::

    "PCKPT1"                    6 bytes magic
    repeated until EOF:
      name_len  u32 LE, name (utf-8)
      rank      u32 LE, dims u32 LE x rank
      data      float32 LE, prod(dims) values

Writers go through a temporary file and an atomic rename, so an interrupted
write never clobbers the previous file.
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .polar import PolarQuad

PQUAD_MAGIC = b"PQD1"
CKPT_MAGIC = b"PCKPT1"
PQUAD_HEADER = 16
_MAX_DIM = 1 << 16


class FormatError(ValueError):
    """Malformed or truncated file."""


def atomic_write(path, payload: bytes):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_pquad(quad: PolarQuad) -> bytes:
    _, c, h, w = quad.planes.shape
    body = np.ascontiguousarray(quad.planes, dtype="<f4").tobytes()
    return PQUAD_MAGIC + struct.pack("<3I", h, w, c) + body


def decode_pquad(buf: bytes) -> PolarQuad:
    if len(buf) < PQUAD_HEADER:
        raise FormatError("truncated PQUAD header")
    if buf[:4] != PQUAD_MAGIC:
        raise FormatError(f"bad PQUAD magic {buf[:4]!r}")
    h, w, c = struct.unpack("<3I", buf[4:16])
    if c not in (1, 3):
        raise FormatError(f"PQUAD channel count must be 1 or 3, got {c}")
    if not (0 < h <= _MAX_DIM and 0 < w <= _MAX_DIM):
        raise FormatError(f"PQUAD dimensions {h}x{w} out of range")
    n = 4 * c * h * w
    if len(buf) != PQUAD_HEADER + 4 * n:
        raise FormatError(f"PQUAD payload has {len(buf) - PQUAD_HEADER} bytes, expected {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=PQUAD_HEADER)
    try:
        return PolarQuad(data.reshape(4, c, h, w).astype(np.float32))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_pquad(path, quad: PolarQuad):
    atomic_write(path, encode_pquad(quad))


def read_pquad(path) -> PolarQuad:
    with open(path, "rb") as f:
        return decode_pquad(f.read())


def encode_checkpoint(params) -> bytes:
    out = [CKPT_MAGIC]
    for name, p in params.items():
        arr = np.ascontiguousarray(getattr(p, "data", p), dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> dict:
    """name -> float32 array, in file order."""
    if buf[:6] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:6]!r}")
    pos, out = 6, {}

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError("truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (nlen,) = struct.unpack("<I", take(4))
        if nlen > 4096:
            raise FormatError("checkpoint name length out of range")
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        if rank > 8:
            raise FormatError("checkpoint tensor rank out of range")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        if count > 1 << 31:
            raise FormatError("checkpoint tensor too large")
        if name in out:
            raise FormatError(f"duplicate parameter {name!r}")
        out[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    return out


def write_checkpoint(path, params):
    atomic_write(path, encode_checkpoint(params))


def read_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def load_into(params, arrays):
    """Copy checkpoint arrays into an existing parameter dict (names and shapes must match)."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise FormatError(f"checkpoint/config mismatch: missing {sorted(missing)[:3]}, "
                          f"unexpected {sorted(extra)[:3]}")
    for name, p in params.items():
        a = arrays[name]
        if a.shape != p.data.shape:
            raise FormatError(f"{name}: checkpoint shape {a.shape} vs expected {p.data.shape}")
        p.data[...] = a
    return params


# ---------------------------------------------------------------------------
# 16-bit PNG convenience converter (lossy)
#
# The four planes are tiled 2x2 in DoFP order ([[90, 45], [135, 0]] degrees)
# and colour channels are stacked vertically, giving a single-channel image
# of shape (2 * C * H, 2 * W).  Values are clipped to [0, 1] and quantized to
# round(v * 65535), so a round trip is exact only up to 1 / 131070.

_PNG_TILES = ((2, 1), (3, 0))   # angle index at each tile position


def quad_to_png16_array(quad: PolarQuad) -> np.ndarray:
    _, c, h, w = quad.planes.shape
    out = np.empty((2 * c * h, 2 * w), dtype=np.uint16)
    q = np.rint(np.clip(quad.planes, 0.0, 1.0) * 65535.0).astype(np.uint16)
    for ch in range(c):
        base = 2 * h * ch
        for r, row in enumerate(_PNG_TILES):
            for col, a in enumerate(row):
                out[base + r * h:base + (r + 1) * h, col * w:(col + 1) * w] = q[a, ch]
    return out


def png16_array_to_quad(img: np.ndarray, channels=1) -> PolarQuad:
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] % (2 * channels) or img.shape[1] % 2:
        raise FormatError(f"PNG of shape {img.shape} is not a tiled {channels}-channel quad")
    h, w = img.shape[0] // (2 * channels), img.shape[1] // 2
    planes = np.empty((4, channels, h, w), dtype=np.float32)
    for ch in range(channels):
        base = 2 * h * ch
        for r, row in enumerate(_PNG_TILES):
            for col, a in enumerate(row):
                planes[a, ch] = img[base + r * h:base + (r + 1) * h, col * w:(col + 1) * w] / 65535.0
    return PolarQuad(planes)


def write_png16(path, quad: PolarQuad):
    import io as _bio

    from PIL import Image

    buf = _bio.BytesIO()
    Image.fromarray(quad_to_png16_array(quad)).save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def read_png16(path, channels=1) -> PolarQuad:
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except OSError as exc:
        raise FormatError(f"cannot decode PNG {path}: {exc}") from exc
    if arr.dtype != np.uint16:
        arr = arr.astype(np.uint16)
    return png16_array_to_quad(arr, channels)


def read_quad(path, channels=1) -> PolarQuad:
    """Read a ``.pquad`` file, or a tiled 16-bit ``.png``."""
    if os.fspath(path).lower().endswith(".png"):
        return read_png16(path, channels)
    return read_pquad(path)


def write_quad(path, quad: PolarQuad):
    if os.fspath(path).lower().endswith(".png"):
        write_png16(path, quad)
    else:
        write_pquad(path, quad)
