"""Checkpoint archive: a text header followed by named float64 arrays.

Layout::

    LOBFORECAST-CHECKPOINT <version>\\n
    <header as one line of JSON>\\n
    uint32 array_count
    per array:
        uint32 name_length, name bytes (UTF-8),
        uint32 rank, rank x uint64 extents,
        prod(extents) x float64 values

All integers and floats are little-endian. Arrays are written in the order
given, so writing the same content twice yields identical bytes.
"""

import json
import struct

import numpy as np

from ..errors import CheckpointFormatError

MAGIC = "LOBFORECAST-CHECKPOINT"
FORMAT_VERSION = 1


def write_checkpoint(path, header, arrays):
    """Write ``header`` (JSON-able dict) and ``arrays`` (name -> ndarray)."""
    head = dict(header)
    head["format_version"] = FORMAT_VERSION
    chunks = [
        f"{MAGIC} {FORMAT_VERSION}\n".encode(),
        json.dumps(head, sort_keys=True, separators=(",", ":")).encode() + b"\n",
        struct.pack("<I", len(arrays)),
    ]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_checkpoint(path):
    """Return ``(header, arrays)`` as written by :func:`write_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        first = blob.index(b"\n")
        magic, version = blob[:first].decode().split()
        if magic != MAGIC:
            raise CheckpointFormatError(f"{path}: not a checkpoint archive")
        if int(version) != FORMAT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported format version {version}")
        second = blob.index(b"\n", first + 1)
        header = json.loads(blob[first + 1:second])
        pos = second + 1
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            n = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
            pos += 8 * n
            arrays[name] = values.astype(np.float64).reshape(shape)
    except (ValueError, struct.error, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt checkpoint ({exc})") from exc
    if pos != len(blob):
        raise CheckpointFormatError(f"{path}: trailing bytes after arrays")
    return header, arrays
