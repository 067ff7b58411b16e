"""Synthetic micro-documents with known layout structure.

Pages are a single column of blocks stacked top to bottom. Title,
Paragraph and FigureCaption blocks are rendered identically (same glyph
blocks, same word-length distribution, same line filling) and differ only in
vocabulary, so those labels can be recovered from text but not from pixels.
Every Figure is immediately followed by a FigureCaption one pixel below it.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .render import render_page
from .types import DEFAULT_CATALOG, CharItem, ClassCatalog, Document, Region, SentenceItem

REQUIRED_CLASSES = ("Title", "Paragraph", "Figure", "FigureCaption", "Table")
WORD_LENGTHS = (3, 4, 5, 6)


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    width: int = 64
    height: int = 64
    glyph_w: int = 3
    glyph_h: int = 4
    margin: int = 2
    block_gap: int = 2
    catalog: ClassCatalog = DEFAULT_CATALOG
    # relative frequency of each block kind; a Figure always brings its caption
    block_weights: tuple[tuple[str, float], ...] = (
        ("Title", 0.25),
        ("Paragraph", 0.35),
        ("Figure", 0.2),
        ("Table", 0.2),
    )
    words_per_length: int = 6
    vocab_seed: int = 7
    token_labels: bool = True
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def line_pitch(self) -> int:
        return self.glyph_h + 1

    @property
    def table_pitch(self) -> int:
        return self.glyph_h + 2


def build_vocabularies(spec: SynthSpec) -> dict[str, dict[int, list[str]]]:
    """Per-class word lists, keyed by word length.

    Title words are upper case; Paragraph and FigureCaption draw from the
    same lower-case alphabet but use disjoint word lists.
    """
    rng = np.random.default_rng(spec.vocab_seed)
    used: set[str] = set()
    vocab: dict[str, dict[int, list[str]]] = {}
    alphabets = {
        "Title": string.ascii_uppercase,
        "Paragraph": string.ascii_lowercase,
        "FigureCaption": string.ascii_lowercase,
    }
    for cls, letters in alphabets.items():
        by_len: dict[int, list[str]] = {}
        for length in WORD_LENGTHS:
            words: list[str] = []
            while len(words) < spec.words_per_length:
                w = "".join(rng.choice(list(letters), size=length))
                if w not in used:
                    used.add(w)
                    words.append(w)
            by_len[length] = words
        vocab[cls] = by_len
    return vocab


def _check_feasible(spec: SynthSpec) -> None:
    for name in REQUIRED_CLASSES:
        if name not in spec.catalog.names:
            raise GenerationError(f"class grammar needs class {name!r}")
    text_w = spec.width - 2 * spec.margin
    text_h = spec.height - 2 * spec.margin
    if spec.glyph_w < 1 or spec.glyph_h < 2:
        raise GenerationError("glyphs must be at least 1x2 pixels")
    if text_w < 12 * spec.glyph_w + 2:
        raise GenerationError(
            f"page width {spec.width} too small for glyph width {spec.glyph_w} (need room for two words per line)"
        )
    if text_h < 2 * spec.table_pitch + 1:
        raise GenerationError(f"page height {spec.height} too small for glyph height {spec.glyph_h}")
    if not any(w > 0 for _, w in spec.block_weights):
        raise GenerationError("block weights must include a positive entry")


class _PageBuilder:
    def __init__(self, spec: SynthSpec, vocab, rng: np.random.Generator):
        self.spec = spec
        self.vocab = vocab
        self.rng = rng
        self.chars: list[CharItem] = []
        self.sentences: list[SentenceItem] = []
        self.regions: list[Region] = []
        self.token_labels: list[int] = []

    def _word(self, cls: str) -> str:
        length = WORD_LENGTHS[self.rng.integers(len(WORD_LENGTHS))]
        words = self.vocab[cls][length]
        return words[self.rng.integers(len(words))]

    def _emit_line(self, text: str, x0: int, y0: int, class_id: int) -> tuple[int, int, int, int]:
        gw, gh = self.spec.glyph_w, self.spec.glyph_h
        start = len(self.chars)
        for i, c in enumerate(text):
            self.chars.append(CharItem(c, (x0 + i * gw, y0, x0 + (i + 1) * gw, y0 + gh)))
        box = (x0, y0, x0 + len(text) * gw, y0 + gh)
        self.sentences.append(SentenceItem(text, box, tuple(range(start, len(self.chars)))))
        self.token_labels.extend([class_id] * len(text.split()))
        return box

    def plan_text(self, cls: str, n_lines: int, max_chars: int) -> list[str]:
        lines = []
        for li in range(n_lines):
            last = li == n_lines - 1
            budget = max_chars if not last else None
            words: list[str] = []
            if last:
                want = int(self.rng.integers(2, 5))
            length = 0
            while True:
                w = self._word(cls)
                need = len(w) + (1 if words else 0)
                if length + need > max_chars:
                    if not words:
                        continue
                    break
                words.append(w)
                length += need
                if last and len(words) >= want:
                    break
                if budget is not None and length >= budget:
                    break
            lines.append(" ".join(words))
        return lines

    def text_block(self, cls: str, lines: list[str], x0: int, y0: int) -> tuple[int, int, int, int]:
        cid = self.spec.catalog.index(cls)
        boxes = [
            self._emit_line(text, x0, y0 + i * self.spec.line_pitch, cid) for i, text in enumerate(lines)
        ]
        box = (x0, y0, max(b[2] for b in boxes), boxes[-1][3])
        self.regions.append(Region(box, cid))
        return box

    def text_height(self, n_lines: int) -> int:
        return (n_lines - 1) * self.spec.line_pitch + self.spec.glyph_h

    def table_block(self, x0: int, y0: int, width: int, rows: int, cols: int) -> tuple[int, int, int, int]:
        spec = self.spec
        cid = spec.catalog.index("Table")
        pitch = spec.table_pitch
        inner = (width - 2) // spec.glyph_w
        cell = inner // cols
        for r in range(rows):
            cells = []
            for _ in range(cols):
                digits = int(self.rng.integers(1, 4))
                cells.append("".join(str(d) for d in self.rng.integers(0, 10, size=digits)))
            text = "".join(c.ljust(cell) for c in cells[:-1]) + cells[-1]
            self._emit_line(text, x0 + 1, y0 + 1 + r * pitch, cid)
        box = (x0, y0, x0 + width, y0 + rows * pitch + 1)
        self.regions.append(Region(box, cid))
        return box

    def figure_block(self, x0: int, y0: int, width: int, height: int) -> tuple[int, int, int, int]:
        box = (x0, y0, x0 + width, y0 + height)
        self.regions.append(Region(box, self.spec.catalog.index("Figure")))
        return box


def _synthesize_one(spec: SynthSpec, vocab, seed: int, index: int) -> Document:
    rng = np.random.default_rng([seed, index])
    b = _PageBuilder(spec, vocab, rng)
    kinds = [k for k, _ in spec.block_weights]
    weights = np.array([w for _, w in spec.block_weights], dtype=np.float64)
    weights = weights / weights.sum()
    x0 = spec.margin
    text_w = spec.width - 2 * spec.margin
    max_chars = text_w // spec.glyph_w
    y = spec.margin
    bottom = spec.height - spec.margin
    failures = 0
    while failures < 6:
        kind = kinds[rng.choice(len(kinds), p=weights)]
        room = bottom - y
        if kind in ("Title", "Paragraph"):
            n_lines = 1 if kind == "Title" else int(rng.integers(1, 4))
            if b.text_height(n_lines) > room:
                failures += 1
                continue
            lines = b.plan_text(kind, n_lines, max_chars)
            box = b.text_block(kind, lines, x0, y)
        elif kind == "Figure":
            n_cap = int(rng.integers(1, 3))
            fh = int(rng.integers(8, 17))
            cap_h = b.text_height(n_cap)
            if fh + 1 + cap_h > room:
                fh = room - 1 - cap_h
                if fh < 6:
                    failures += 1
                    continue
            fw = int(rng.integers(text_w // 3, text_w + 1))
            fig = b.figure_block(x0, y, fw, fh)
            lines = b.plan_text("FigureCaption", n_cap, max_chars)
            box = b.text_block("FigureCaption", lines, x0, fig[3] + 1)
        else:
            rows = int(rng.integers(2, 4))
            th = rows * spec.table_pitch + 1
            if th > room:
                rows = (room - 1) // spec.table_pitch
                if rows < 2:
                    failures += 1
                    continue
            tw = int(rng.integers(text_w // 2, text_w + 1))
            cols = min(int(rng.integers(2, 4)), ((tw - 2) // spec.glyph_w) // 4)
            box = b.table_block(x0, y, tw, rows, max(cols, 1))
        y = box[3] + spec.block_gap
        if y >= bottom:
            break
    chars = tuple(b.chars)
    regions = tuple(b.regions)
    raster = render_page(spec.width, spec.height, chars, regions, spec.catalog, spec.glyph_h)
    return Document(
        id=index,
        width=spec.width,
        height=spec.height,
        raster=raster,
        chars=chars,
        sentences=tuple(b.sentences),
        regions=regions,
        token_labels=tuple(b.token_labels) if spec.token_labels else None,
    )


def synthesize(seed: int, count: int, spec: SynthSpec | None = None) -> list[Document]:
    """Generate ``count`` documents; document ``i`` depends only on ``(seed, i)``."""
    spec = spec or SynthSpec()
    if count < 0:
        raise GenerationError(f"count must be non-negative, got {count}")
    _check_feasible(spec)
    vocab = build_vocabularies(spec)
    return [_synthesize_one(spec, vocab, seed, i) for i in range(count)]
