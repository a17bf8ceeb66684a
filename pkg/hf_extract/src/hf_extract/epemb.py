"""Embedding archive writing (little-endian throughout):

    magic   8 bytes  "EPEMB1\\0\\0"
    dim     u32
    count   u64      number of sentence records
    then per sentence:
    id        u64
    n_tokens  u32    > 0
    vectors   n_tokens * dim  f32
"""

from __future__ import annotations

import os
import struct

import numpy as np

from hf_extract.errors import DataError

MAGIC = b"EPEMB1\x00\x00"
_HEADER = struct.Struct("<8sIQ")
_RECORD = struct.Struct("<QI")


def write_archive(path: str | os.PathLike, records, dim: int) -> None:
    """Write (sentence_id, (n_tokens, dim) float32) records in order."""
    if dim <= 0:
        raise DataError(f"bad embedding dimension {dim}")
    records = list(records)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, dim, len(records)))
        for sid, vectors in records:
            arr = np.ascontiguousarray(vectors, dtype="<f4")
            if arr.ndim != 2 or arr.shape[1] != dim:
                raise DataError(
                    f"sentence {sid}: vectors shaped {np.shape(vectors)}, "
                    f"archive dimension is {dim}"
                )
            if arr.shape[0] == 0:
                raise DataError(f"sentence {sid}: zero tokens")
            f.write(_RECORD.pack(sid, arr.shape[0]))
            f.write(arr.tobytes())
