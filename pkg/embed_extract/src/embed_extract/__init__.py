"""Sentence-encoder embedding export to the PQE1 binary format."""

from .extract import ExtractConfig, ExtractError, Segment, extract, load_encoder, read_corpus

__version__ = "0.1.0"

__all__ = [
    "ExtractConfig",
    "ExtractError",
    "Segment",
    "extract",
    "load_encoder",
    "read_corpus",
]
