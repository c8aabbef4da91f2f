"""Binary persistence for named float32 tensors.

Layout: magic "CGN1", u32 little-endian tensor count, then per tensor a u16
name length, the UTF-8 name, u8 ndim, ndim u32 dims, and raw little-endian
float32 data; the file ends with a u32 CRC32 of every preceding byte. Saving
the result of a load reproduces the file byte for byte, because entry order
is preserved and all values stay float32.
"""

import struct
import zlib

import numpy as np

MAGIC = b"CGN1"


class CorruptCheckpointError(Exception):
    """Raised when a checkpoint fails magic, CRC, or structural validation."""


def save_tensors(path, named):
    """Write an ordered mapping (or (name, array) iterable) of tensors."""
    items = list(named.items()) if hasattr(named, "items") else list(named)
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", len(items))
    for name, arr in items:
        arr = np.asarray(arr, dtype="<f4")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # keeps 0-d tensors 0-d
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor rank too high: {arr.ndim}")
        buf += struct.pack("<H", len(nb))
        buf += nb
        buf += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            buf += struct.pack("<I", d)
        buf += arr.tobytes(order="C")
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(bytes(buf))


def load_tensors(path):
    """Read a checkpoint back as an ordered dict of float32 arrays."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 8:
        raise CorruptCheckpointError("file too short to be a checkpoint")
    if raw[:4] != MAGIC:
        raise CorruptCheckpointError(f"bad magic {raw[:4]!r}")
    body, stored_crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CorruptCheckpointError("CRC mismatch (truncated or corrupted file)")

    out = {}
    pos = 4
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + name_len].decode("utf-8")
            if len(body[pos:pos + name_len]) != name_len:
                raise CorruptCheckpointError("unexpected end of file in name")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", body, pos) if ndim else ()
            pos += 4 * ndim
            n_bytes = 4 * int(np.prod(dims, dtype=np.int64)) if ndim else 4
            chunk = body[pos:pos + n_bytes]
            if len(chunk) != n_bytes:
                raise CorruptCheckpointError("unexpected end of file in data")
            pos += n_bytes
            arr = np.frombuffer(chunk, dtype="<f4").reshape(dims).copy()
            if name in out:
                raise CorruptCheckpointError(f"duplicate tensor name {name!r}")
            out[name] = arr
    except struct.error as exc:
        raise CorruptCheckpointError(f"malformed checkpoint structure: {exc}") from exc
    if pos != len(body):
        raise CorruptCheckpointError("trailing bytes after last tensor")
    return out


def scalar(value):
    """Encode one number as a 0-d float32 tensor."""
    return np.asarray(float(value), dtype=np.float32)
