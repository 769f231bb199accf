"""Binary container shared by classifier checkpoints and pretrained inits.

Layout (all integers little-endian)::

    magic     4 bytes   b"STCK" (classifier) or b"STPI" (pretrained init)
    version   uint16
    vocab     64 bytes  hex sha256 of the vocabulary
    meta_len  uint32, then meta_len bytes of UTF-8 JSON
    n_arrays  uint16
    per array: ndim uint8, then ndim x uint64 dims
    payload   every array as float64 '<f8', C order, in header order
    crc32     uint32 over everything above
"""

import json
import struct
import zlib

import numpy as np

from .errors import CorruptFile, VersionMismatch, VocabHashMismatch

FORMAT_VERSION = 1
MODEL_TAG = b"STCK"
INIT_TAG = b"STPI"


def dumps(tag: bytes, vocab_hash: str, meta: dict, arrays) -> bytes:
    vh = vocab_hash.encode("ascii")
    if len(vh) != 64:
        raise ValueError("vocab hash must be 64 hex characters")
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [tag, struct.pack("<H", FORMAT_VERSION), vh, struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<H", len(arrays)))
    for arr in arrays:
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes, tag: bytes, vocab_hash: str | None = None):
    """Parse a container; returns (vocab_hash, meta, arrays)."""
    if len(data) < 4 + 2 + 64 + 4 + 4:
        raise CorruptFile("file too short")
    if data[:4] != tag:
        raise CorruptFile(f"expected tag {tag!r}, found {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("checksum mismatch (truncated or corrupted)")
    try:
        stored_hash = body[6:70].decode("ascii")
        pos = 70
        (meta_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        meta = json.loads(body[pos:pos + meta_len])
        pos += meta_len
        (n_arrays,) = struct.unpack_from("<H", body, pos)
        pos += 2
        shapes = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shapes.append(struct.unpack_from(f"<{ndim}Q", body, pos))
            pos += 8 * ndim
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape)
            arrays.append(arr.astype(np.float64))
            pos += 8 * count
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptFile(str(exc)) from None
    if pos != len(body):
        raise CorruptFile("trailing bytes after payload")
    if vocab_hash is not None and vocab_hash != stored_hash:
        raise VocabHashMismatch(f"checkpoint vocab {stored_hash[:12]} != {vocab_hash[:12]}")
    return stored_hash, meta, arrays


def write(path, tag, vocab_hash, meta, arrays):
    with open(path, "wb") as f:
        f.write(dumps(tag, vocab_hash, meta, arrays))


def read(path, tag, vocab_hash=None):
    with open(path, "rb") as f:
        return loads(f.read(), tag, vocab_hash)
