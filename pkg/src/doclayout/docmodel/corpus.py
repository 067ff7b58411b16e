"""JSONL corpus reading and writing."""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .render import render_page
from .types import (
    DEFAULT_CATALOG,
    CharItem,
    ClassCatalog,
    Document,
    DocumentError,
    Region,
    SentenceItem,
    validate,
)


class CorpusError(ValueError):
    """Malformed corpus line (bad JSON or missing fields)."""


def _box(raw, what: str) -> tuple[int, int, int, int]:
    if not isinstance(raw, list) or len(raw) != 4 or not all(isinstance(v, int) for v in raw):
        raise CorpusError(f"{what}: box must be a list of 4 integers, got {raw!r}")
    return tuple(raw)


def document_from_json(rec: dict, catalog: ClassCatalog = DEFAULT_CATALOG, glyph_h: int = 4) -> Document:
    try:
        doc_id = int(rec["id"])
        width, height = int(rec["width"]), int(rec["height"])
        chars = tuple(CharItem(c["c"], _box(c["box"], "char")) for c in rec.get("chars", []))
        sentences = tuple(
            SentenceItem(s["text"], _box(s["box"], "sentence"), tuple(int(i) for i in s["charIdx"]))
            for s in rec.get("sentences", [])
        )
        regions = tuple(
            Region(_box(r["box"], "region"), catalog.index(r["class"])) for r in rec.get("regions", [])
        )
        labels = rec.get("tokenLabels")
        token_labels = None if labels is None else tuple(catalog.index(n) for n in labels)
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"missing or malformed field: {exc}") from None
    if "raster" in rec and rec["raster"] is not None:
        raw = base64.b64decode(rec["raster"])
        if len(raw) != 4 * height * width * 3:
            raise DocumentError(f"document {doc_id}: raster has {len(raw)} bytes, expected {12 * height * width}")
        raster = np.frombuffer(raw, dtype="<f4").reshape(height, width, 3).astype(np.float32)
    else:
        if width <= 0 or height <= 0:
            raise DocumentError(f"document {doc_id}: non-positive page size {width}x{height}")
        raster = None
    doc = Document(doc_id, width, height, raster if raster is not None else np.zeros((0, 0, 3), np.float32),
                   chars, sentences, regions, token_labels)
    if raster is None:
        # validate geometry before drawing so bad boxes report cleanly
        _validate_geometry(doc, catalog)
        raster = render_page(width, height, chars, regions, catalog, glyph_h)
        doc = Document(doc_id, width, height, raster, chars, sentences, regions, token_labels)
    validate(doc, catalog)
    return doc


def _validate_geometry(doc: Document, catalog: ClassCatalog) -> None:
    probe = Document(doc.id, doc.width, doc.height, np.ones((doc.height, doc.width, 3), np.float32),
                     doc.chars, doc.sentences, doc.regions, doc.token_labels)
    validate(probe, catalog)


def document_to_json(doc: Document, catalog: ClassCatalog = DEFAULT_CATALOG, glyph_h: int = 4,
                     include_raster: bool | None = None) -> dict:
    """Serialise one document; the raster is omitted when it re-renders identically."""
    rec: dict = {"id": doc.id, "width": doc.width, "height": doc.height}
    if include_raster is None:
        rendered = render_page(doc.width, doc.height, doc.chars, doc.regions, catalog, glyph_h)
        include_raster = not (doc.raster.dtype == np.float32 and np.array_equal(rendered, doc.raster))
    if include_raster:
        rec["raster"] = base64.b64encode(np.ascontiguousarray(doc.raster, dtype="<f4").tobytes()).decode("ascii")
    rec["chars"] = [{"c": c.char, "box": list(c.box)} for c in doc.chars]
    rec["sentences"] = [
        {"text": s.text, "box": list(s.box), "charIdx": list(s.char_indices)} for s in doc.sentences
    ]
    rec["regions"] = [{"box": list(r.box), "class": catalog.name(r.class_id)} for r in doc.regions]
    if doc.token_labels is not None:
        rec["tokenLabels"] = [catalog.name(c) for c in doc.token_labels]
    return rec


def load_corpus(path, catalog: ClassCatalog = DEFAULT_CATALOG, glyph_h: int = 4) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            try:
                docs.append(document_from_json(rec, catalog, glyph_h))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            except DocumentError as exc:
                raise DocumentError(f"{path}:{lineno}: {exc}") from None
    return docs


def dumps_corpus(docs, catalog: ClassCatalog = DEFAULT_CATALOG, glyph_h: int = 4) -> str:
    return "".join(
        json.dumps(document_to_json(d, catalog, glyph_h), separators=(",", ":"), ensure_ascii=False) + "\n"
        for d in docs
    )


def save_corpus(docs, path, catalog: ClassCatalog = DEFAULT_CATALOG, glyph_h: int = 4) -> None:
    Path(path).write_text(dumps_corpus(docs, catalog, glyph_h), encoding="utf-8")
