"""Token-embedding archives and span pooling.

Archive layout (little-endian throughout):

    magic   8 bytes  "EPEMB1\\0\\0"
    dim     u32
    count   u64      number of sentence records
    then per sentence:
    id        u64
    n_tokens  u32    > 0
    vectors   n_tokens * dim  f32

Pooling means token vectors over a span with float64 accumulation; a
two-span example pools each span separately and averages the two means.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from epb.corpus import DatasetSplit, LabeledExample
from epb.errors import DataError

MAGIC = b"EPEMB1\x00\x00"
_HEADER = struct.Struct("<8sIQ")
_RECORD = struct.Struct("<QI")


class EmbeddingWriter:
    """Streams sentence records; patches the count on close."""

    def __init__(self, path: str | os.PathLike, dim: int):
        if dim <= 0:
            raise DataError(f"bad embedding dimension {dim}")
        self.dim = dim
        self.count = 0
        self._f = open(path, "wb")
        self._f.write(_HEADER.pack(MAGIC, dim, 0))

    def write(self, sentence_id: int, vectors: np.ndarray) -> None:
        arr = np.ascontiguousarray(vectors, dtype="<f4")
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise DataError(
                f"sentence {sentence_id}: vectors shaped {vectors.shape}, "
                f"archive dimension is {self.dim}"
            )
        if arr.shape[0] == 0:
            raise DataError(f"sentence {sentence_id}: zero tokens")
        self._f.write(_RECORD.pack(sentence_id, arr.shape[0]))
        self._f.write(arr.tobytes())
        self.count += 1

    def close(self) -> None:
        self._f.seek(len(MAGIC) + 4)
        self._f.write(struct.pack("<Q", self.count))
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_archive(path, embeddings: dict[int, np.ndarray], dim: int) -> None:
    with EmbeddingWriter(path, dim) as w:
        for sid, vectors in embeddings.items():
            w.write(sid, vectors)


def read_archive(path: str | os.PathLike) -> tuple[int, dict[int, np.ndarray]]:
    """Load a whole archive; returns (dim, {sentence_id: (n_tokens, dim) f32})."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated header at byte {len(data)}")
    magic, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if dim == 0:
        raise DataError(f"{path}: zero embedding dimension")
    out: dict[int, np.ndarray] = {}
    off = _HEADER.size
    for _ in range(count):
        if len(data) < off + _RECORD.size:
            raise DataError(f"{path}: truncated record header at byte {off}")
        sid, n_tokens, = _RECORD.unpack_from(data, off)
        off += _RECORD.size
        if n_tokens == 0:
            raise DataError(f"{path}: sentence {sid} has zero tokens")
        nbytes = n_tokens * dim * 4
        if len(data) < off + nbytes:
            raise DataError(f"{path}: truncated vectors at byte {off}")
        if sid in out:
            raise DataError(f"{path}: duplicate sentence id {sid}")
        vecs = np.frombuffer(data, dtype="<f4", count=n_tokens * dim, offset=off)
        out[sid] = vecs.reshape(n_tokens, dim).copy()
        off += nbytes
    if off != len(data):
        raise DataError(f"{path}: {len(data) - off} trailing bytes after records")
    return dim, out


def validate_archive(path: str | os.PathLike) -> dict:
    """Structural check; returns summary stats for reporting."""
    dim, table = read_archive(path)
    n_tokens = sum(v.shape[0] for v in table.values())
    finite = all(np.isfinite(v).all() for v in table.values())
    return {
        "dim": dim,
        "sentences": len(table),
        "tokens": n_tokens,
        "all_finite": bool(finite),
    }


def _span_mean(vectors: np.ndarray, start: int, end: int, sid: int) -> np.ndarray:
    if end > vectors.shape[0]:
        raise DataError(
            f"span [{start}, {end}) exceeds the {vectors.shape[0]} embedded "
            f"tokens of sentence {sid}"
        )
    return vectors[start:end].astype(np.float64).mean(axis=0)


def pool_example(
    table: dict[int, np.ndarray], example: LabeledExample
) -> np.ndarray:
    """Mean-pool an example's span(s); mean of the two span means when a
    second span is present.  float64 accumulation, float32 result."""
    try:
        vectors = table[example.sentence_id]
    except KeyError:
        raise DataError(
            f"sentence {example.sentence_id} missing from archive"
        ) from None
    pooled = _span_mean(vectors, example.span1.start, example.span1.end,
                        example.sentence_id)
    if example.span2 is not None:
        second = _span_mean(vectors, example.span2.start, example.span2.end,
                            example.sentence_id)
        pooled = (pooled + second) / 2.0
    return pooled.astype(np.float32)


@dataclass(frozen=True)
class PooledSet:
    """Probe-ready design matrix for one split part."""

    X: np.ndarray  # (n, dim) float32
    examples: tuple[LabeledExample, ...]

    def __len__(self) -> int:
        return self.X.shape[0]


def pool_split(
    table: dict[int, np.ndarray],
    examples: tuple[LabeledExample, ...],
    dim: int,
) -> PooledSet:
    X = np.zeros((len(examples), dim), dtype=np.float32)
    for i, ex in enumerate(examples):
        X[i] = pool_example(table, ex)
    return PooledSet(X=X, examples=tuple(examples))


def pool_dataset(
    archive_path: str | os.PathLike, split: DatasetSplit
) -> dict[str, PooledSet]:
    """Pool train/dev/test of a dataset against one archive."""
    dim, table = read_archive(archive_path)
    return {
        name: pool_split(table, part, dim)
        for name, part in (
            ("train", split.train),
            ("dev", split.dev),
            ("test", split.test),
        )
    }


def write_pooled(path, pooled: PooledSet) -> None:
    """Persist pooled vectors, one single-token record per example ordinal."""
    with EmbeddingWriter(path, pooled.X.shape[1]) as w:
        for i in range(len(pooled)):
            w.write(i, pooled.X[i : i + 1])
