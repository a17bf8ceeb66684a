"""Reading pre-tokenized corpora: one json record per line.

Each line carries `{"id": <u64>, "tokens": [...], "targets": [...]}`;
only the id and tokens matter here, targets pass through untouched.
"""

from __future__ import annotations

import json
import os

from hf_extract.errors import DataError

_U64_MAX = 2**64 - 1


def read_sentences(path: str | os.PathLike) -> list[tuple[int, tuple[str, ...]]]:
    """Return (sentence_id, tokens) pairs in file order."""
    out: list[tuple[int, tuple[str, ...]]] = []
    seen: set[int] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid json ({e})") from None
            if not isinstance(record, dict):
                raise DataError(f"{path}:{lineno}: record is not an object")
            sid = record.get("id")
            if isinstance(sid, bool) or not isinstance(sid, int) or not 0 <= sid <= _U64_MAX:
                raise DataError(f"{path}:{lineno}: id must be a u64, got {sid!r}")
            if sid in seen:
                raise DataError(f"{path}:{lineno}: duplicate sentence id {sid}")
            tokens = record.get("tokens")
            if (
                not isinstance(tokens, list)
                or not tokens
                or not all(isinstance(t, str) for t in tokens)
            ):
                raise DataError(
                    f"{path}:{lineno}: tokens must be a non-empty list of strings"
                )
            seen.add(sid)
            out.append((sid, tuple(tokens)))
    if not out:
        raise DataError(f"{path}: no sentences")
    return out
