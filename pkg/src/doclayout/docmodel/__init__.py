"""Documents, JSONL corpora and the synthetic page generator."""

from .corpus import CorpusError, document_from_json, document_to_json, dumps_corpus, load_corpus, save_corpus
from .render import render_page
from .synth import GenerationError, SynthSpec, build_vocabularies, synthesize
from .types import (
    DEFAULT_CATALOG,
    Box,
    CharItem,
    ClassCatalog,
    Document,
    DocumentError,
    Region,
    SentenceItem,
    Token,
    box_iou,
    validate,
)

__all__ = [
    "DEFAULT_CATALOG",
    "Box",
    "CharItem",
    "ClassCatalog",
    "CorpusError",
    "Document",
    "DocumentError",
    "GenerationError",
    "Region",
    "SentenceItem",
    "SynthSpec",
    "Token",
    "box_iou",
    "build_vocabularies",
    "document_from_json",
    "document_to_json",
    "dumps_corpus",
    "load_corpus",
    "render_page",
    "save_corpus",
    "synthesize",
    "validate",
]
