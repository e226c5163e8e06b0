"""Binary checkpoint container: named float32 arrays plus RNG state.

Layout, all integers little-endian:

  magic      4 bytes, b"VIMC"
  version    u16 (this build reads version 1)
  iteration  u64
  rng blob   u32 length + raw bytes (PCG64 state, see pack_rng_state)
  count      u32 number of entries
  entry*     u16 name length, UTF-8 name, u8 dtype code (0 = float32),
             u8 ndim, u32 per dimension, raw little-endian payload

Entries keep their write order, so save -> load -> save reproduces the
file byte for byte.
"""

import struct

import numpy as np

from .errors import ConfigurationError, FormatError

MAGIC = b"VIMC"
VERSION = 1
_DTYPE_F32 = 0

_RNG_BLOB_LEN = 16 + 16 + 1 + 8   # state, inc, has_uint32, uinteger


def pack_rng_state(rng):
    """Serialize a numpy Generator backed by PCG64 to 41 bytes."""
    state = rng.bit_generator.state
    if state.get("bit_generator") != "PCG64":
        raise ConfigurationError(
            f"can only serialize PCG64 generators, got "
            f"{state.get('bit_generator')!r}")
    inner = state["state"]
    return (int(inner["state"]).to_bytes(16, "little")
            + int(inner["inc"]).to_bytes(16, "little")
            + bytes([int(state["has_uint32"]) & 1])
            + int(state["uinteger"]).to_bytes(8, "little"))


def unpack_rng_state(blob):
    """Rebuild the numpy Generator serialized by pack_rng_state."""
    if len(blob) != _RNG_BLOB_LEN:
        raise FormatError(
            f"RNG state blob must be {_RNG_BLOB_LEN} bytes, got {len(blob)}")
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {
            "state": int.from_bytes(blob[0:16], "little"),
            "inc": int.from_bytes(blob[16:32], "little"),
        },
        "has_uint32": blob[32],
        "uinteger": int.from_bytes(blob[33:41], "little"),
    }
    return rng


def save_checkpoint(path, iteration, rng_blob, entries):
    """Write named float32 arrays with header metadata.

    Args:
      path: destination file.
      iteration: non-negative training step counter.
      rng_blob: opaque bytes from pack_rng_state.
      entries: mapping name -> float32 ndarray; write order = iteration
        order of the mapping.
    """
    if iteration < 0:
        raise ConfigurationError(f"iteration must be >= 0, got {iteration}")
    chunks = [MAGIC,
              struct.pack("<H", VERSION),
              struct.pack("<Q", int(iteration)),
              struct.pack("<I", len(rng_blob)), bytes(rng_blob),
              struct.pack("<I", len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise ConfigurationError(
                f"checkpoint entry {name!r} must be float32, got {arr.dtype}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ConfigurationError(f"entry name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ConfigurationError(f"entry {name!r} has too many dimensions")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_F32, arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        chunks.append(payload)
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Reader:
    """Cursor over the file bytes with offset-labelled truncation errors."""

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated checkpoint: need {n} bytes for {what} at byte "
                f"{self.pos}, file has {len(self.data) - self.pos} left")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path):
    """Read a checkpoint file.

    Returns:
      (iteration, rng_blob, entries) where entries is a dict preserving
      file order, values float32 ndarrays.

    Raises:
      FormatError: wrong magic, unsupported version, truncation,
        duplicate names, or trailing bytes.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(
            f"bad checkpoint magic {magic!r} at byte 0, expected {MAGIC!r}")
    version = r.u16("version")
    if version != VERSION:
        raise FormatError(
            f"unsupported checkpoint version {version}, this build reads "
            f"version {VERSION}")
    iteration = r.u64("iteration")
    blob_len = r.u32("RNG blob length")
    rng_blob = r.take(blob_len, "RNG blob")
    count = r.u32("entry count")
    entries = {}
    for i in range(count):
        name_len = r.u16(f"entry {i} name length")
        name = r.take(name_len, f"entry {i} name").decode("utf-8")
        if name in entries:
            raise FormatError(f"duplicate checkpoint entry {name!r}")
        dtype_code, ndim = struct.unpack("<BB", r.take(2, f"{name} dtype/ndim"))
        if dtype_code != _DTYPE_F32:
            raise FormatError(
                f"entry {name!r} has unknown dtype code {dtype_code}")
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{name} dims"))
        n_values = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = r.take(4 * n_values, f"{name} payload")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.pos != len(data):
        raise FormatError(
            f"trailing data: {len(data) - r.pos} unread bytes after the "
            f"last entry")
    return iteration, rng_blob, entries
