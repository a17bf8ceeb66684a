"""Top-layer token-vector extraction for edge-probing archives."""

from hf_extract.epemb import write_archive
from hf_extract.epjson import read_sentences
from hf_extract.errors import DataError, ExtractError, UsageError
from hf_extract.extractor import (
    ExtractorConfig,
    extract,
    extract_file,
    load_encoder,
    randomize_weights,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "ExtractError",
    "ExtractorConfig",
    "UsageError",
    "extract",
    "extract_file",
    "load_encoder",
    "randomize_weights",
    "read_sentences",
    "write_archive",
]
