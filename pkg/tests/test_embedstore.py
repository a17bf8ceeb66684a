import hashlib
import struct

import numpy as np
import pytest

from epb.corpus import LabeledExample, Span
from epb.embedstore import (
    MAGIC,
    EmbeddingWriter,
    pool_example,
    pool_split,
    read_archive,
    validate_archive,
    write_archive,
    write_pooled,
)
from epb.errors import DataError


def _toy_archive(path, dim=3):
    vectors = {
        0: np.arange(6, dtype=np.float32).reshape(2, 3),
        7: np.ones((1, 3), dtype=np.float32),
        2: np.full((4, 3), 0.5, dtype=np.float32),
    }
    write_archive(path, vectors, dim)
    return vectors


def test_roundtrip_bitwise(tmp_path):
    path = tmp_path / "a.epemb"
    vectors = _toy_archive(path)
    dim, table = read_archive(path)
    assert dim == 3
    assert set(table) == set(vectors)
    for sid, arr in vectors.items():
        assert table[sid].dtype == np.float32
        assert np.array_equal(table[sid], arr)
    # writing the parsed table back reproduces the same bytes
    out = tmp_path / "b.epemb"
    write_archive(out, table, dim)
    assert out.read_bytes() == path.read_bytes()


def test_header_layout(tmp_path):
    path = tmp_path / "a.epemb"
    _toy_archive(path)
    raw = path.read_bytes()
    assert raw[:8] == b"EPEMB1\x00\x00"
    assert MAGIC == b"EPEMB1\x00\x00"
    dim, count = struct.unpack_from("<IQ", raw, 8)
    assert (dim, count) == (3, 3)
    # first record: u64 id, u32 n_tokens, then f32 vectors
    sid, n_tokens = struct.unpack_from("<QI", raw, 20)
    assert (sid, n_tokens) == (0, 2)
    first = np.frombuffer(raw, dtype="<f4", count=6, offset=32)
    assert np.array_equal(first, np.arange(6, dtype=np.float32))


def test_bad_magic_and_truncations(tmp_path):
    path = tmp_path / "bad.epemb"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 12)
    with pytest.raises(DataError) as err:
        read_archive(path)
    assert "bad magic" in str(err.value)

    good = tmp_path / "good.epemb"
    _toy_archive(good)
    raw = good.read_bytes()
    cut = tmp_path / "cut.epemb"
    cut.write_bytes(raw[:-5])
    with pytest.raises(DataError) as err:
        read_archive(cut)
    assert "truncated" in str(err.value) and "byte" in str(err.value)

    short_header = tmp_path / "hdr.epemb"
    short_header.write_bytes(raw[:10])
    with pytest.raises(DataError):
        read_archive(short_header)

    trailing = tmp_path / "trail.epemb"
    trailing.write_bytes(raw + b"xx")
    with pytest.raises(DataError) as err:
        read_archive(trailing)
    assert "trailing" in str(err.value)


def test_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "dup.epemb"
    with EmbeddingWriter(path, 2) as w:
        w.write(1, np.zeros((1, 2), dtype=np.float32))
        w.write(1, np.ones((1, 2), dtype=np.float32))
    with pytest.raises(DataError) as err:
        read_archive(path)
    assert "duplicate" in str(err.value)


def test_writer_validates_shapes(tmp_path):
    path = tmp_path / "w.epemb"
    with EmbeddingWriter(path, 4) as w:
        with pytest.raises(DataError):
            w.write(0, np.zeros((2, 3), dtype=np.float32))
        with pytest.raises(DataError):
            w.write(0, np.zeros((0, 4), dtype=np.float32))
        w.write(0, np.zeros((1, 4), dtype=np.float32))
    with pytest.raises(DataError):
        EmbeddingWriter(tmp_path / "z.epemb", 0)


def test_validate_archive_summary(tmp_path):
    path = tmp_path / "a.epemb"
    _toy_archive(path)
    summary = validate_archive(path)
    assert summary == {"dim": 3, "sentences": 3, "tokens": 7, "all_finite": True}

    nan_path = tmp_path / "nan.epemb"
    arr = np.full((1, 3), np.nan, dtype=np.float32)
    write_archive(nan_path, {0: arr}, 3)
    assert validate_archive(nan_path)["all_finite"] is False


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def test_pool_single_span_is_float64_mean(tmp_path):
    table = {0: np.array([[1, 2], [3, 4], [5, 6]], dtype=np.float32)}
    ex = LabeledExample(0, Span(0, 3), None, ("x",))
    pooled = pool_example(table, ex)
    assert pooled.dtype == np.float32
    assert np.allclose(pooled, [3.0, 4.0])
    one = pool_example(table, LabeledExample(0, Span(2, 3), None, ("x",)))
    assert np.array_equal(one, np.array([5, 6], dtype=np.float32))


def test_pool_two_spans_is_mean_of_means():
    table = {0: np.array([[0.0], [2.0], [10.0], [14.0]], dtype=np.float32)}
    ex = LabeledExample(0, Span(0, 2), Span(2, 4), ("x",))
    pooled = pool_example(table, ex)
    # span means 1 and 12 -> 6.5; NOT the flat mean 6.5... check asymmetric
    assert pooled[0] == np.float32((1.0 + 12.0) / 2)
    asym = LabeledExample(0, Span(0, 3), Span(3, 4), ("x",))
    pooled = pool_example(table, asym)
    assert pooled[0] == np.float32((4.0 + 14.0) / 2)  # differs from flat mean 6.5


def test_pool_uses_float64_accumulation():
    # f32 summation of 1e8 + tiny values loses the tail; f64 keeps it
    n = 6
    arr = np.full((n, 1), 0.1, dtype=np.float32)
    table = {0: arr}
    ex = LabeledExample(0, Span(0, n), None, ("x",))
    got = pool_example(table, ex)[0]
    expect = np.float32(arr.astype(np.float64).mean())
    assert got == expect


def test_pool_errors():
    table = {0: np.zeros((2, 3), dtype=np.float32)}
    with pytest.raises(DataError) as err:
        pool_example(table, LabeledExample(1, Span(0, 1), None, ("x",)))
    assert "missing" in str(err.value)
    with pytest.raises(DataError) as err:
        pool_example(table, LabeledExample(0, Span(0, 3), None, ("x",)))
    assert "exceeds" in str(err.value)


def test_pool_split_and_pooled_archive(tmp_path):
    table = {
        0: np.array([[1, 1], [3, 3]], dtype=np.float32),
        1: np.array([[5, 7]], dtype=np.float32),
    }
    examples = (
        LabeledExample(0, Span(0, 2), None, ("x",)),
        LabeledExample(1, Span(0, 1), None, ("y",)),
    )
    pooled = pool_split(table, examples, 2)
    assert pooled.X.shape == (2, 2)
    assert np.array_equal(pooled.X[0], [2, 2])
    assert np.array_equal(pooled.X[1], [5, 7])

    out = tmp_path / "pooled.epemb"
    write_pooled(out, pooled)
    dim, loaded = read_archive(out)
    assert dim == 2
    # one record per example ordinal, single token each
    assert set(loaded) == {0, 1}
    assert all(v.shape == (1, 2) for v in loaded.values())
    assert np.array_equal(loaded[0][0], pooled.X[0])


def test_reading_never_mutates_file(tmp_path):
    path = tmp_path / "a.epemb"
    _toy_archive(path)
    before = hashlib.sha256(path.read_bytes()).hexdigest()
    read_archive(path)
    validate_archive(path)
    assert hashlib.sha256(path.read_bytes()).hexdigest() == before
