"""Python bindings for the biorag retrieval-augmented QA pipeline."""

from ._core import (
    BioragError,
    Chunk,
    SearchHit,
    VectorIndex,
    bert_score,
    bleu,
    chunk_text,
    embed,
    exact_match,
    normalize_answer,
    normalize_text,
    reconstruct,
    strip_html,
)

__all__ = [
    "BioragError",
    "Chunk",
    "SearchHit",
    "VectorIndex",
    "bert_score",
    "bleu",
    "chunk_text",
    "embed",
    "exact_match",
    "normalize_answer",
    "normalize_text",
    "reconstruct",
    "strip_html",
]
