from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Box = tuple[int, int, int, int]


class DocumentError(ValueError):
    """A document violates one of its structural invariants."""


@dataclass(frozen=True)
class ClassCatalog:
    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names:
            raise ValueError("class catalog must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate class names in {self.names}")

    @property
    def count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DocumentError(f"unknown class {name!r}") from None

    def name(self, class_id: int) -> str:
        return self.names[class_id]


DEFAULT_CATALOG = ClassCatalog(("Title", "Paragraph", "Figure", "FigureCaption", "Table"))


@dataclass(frozen=True)
class CharItem:
    char: str
    box: Box


@dataclass(frozen=True)
class SentenceItem:
    text: str
    box: Box
    char_indices: tuple[int, ...]


@dataclass(frozen=True)
class Region:
    box: Box
    class_id: int


@dataclass(frozen=True)
class Token:
    text: str
    box: Box
    char_indices: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Document:
    """One page: raster plus characters, text lines and labelled regions.

    ``raster`` is float32 [H, W, 3] in [0, 1]. Boxes are integer pixel
    corners (x0, y0, x1, y1), origin top-left, x1/y1 exclusive.
    """

    id: int
    width: int
    height: int
    raster: np.ndarray
    chars: tuple[CharItem, ...] = ()
    sentences: tuple[SentenceItem, ...] = ()
    regions: tuple[Region, ...] = ()
    token_labels: tuple[int, ...] | None = None
    _tokens: list = field(default=None, repr=False, compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Document):
            return NotImplemented
        return (
            self.id == other.id
            and self.width == other.width
            and self.height == other.height
            and self.chars == other.chars
            and self.sentences == other.sentences
            and self.regions == other.regions
            and self.token_labels == other.token_labels
            and self.raster.dtype == other.raster.dtype
            and np.array_equal(self.raster, other.raster)
        )

    __hash__ = None

    @property
    def n(self) -> int:
        return len(self.chars)

    @property
    def m(self) -> int:
        return len(self.sentences)

    def tokens(self) -> list[Token]:
        """Words: maximal runs of non-space characters within each sentence."""
        if self._tokens is None:
            object.__setattr__(self, "_tokens", _split_tokens(self))
        return self._tokens


def _split_tokens(doc: Document) -> list[Token]:
    out: list[Token] = []
    for sent in doc.sentences:
        run: list[int] = []
        for ci in list(sent.char_indices) + [None]:
            if ci is not None and not doc.chars[ci].char.isspace():
                run.append(ci)
                continue
            if run:
                boxes = [doc.chars[k].box for k in run]
                box = (
                    min(b[0] for b in boxes),
                    min(b[1] for b in boxes),
                    max(b[2] for b in boxes),
                    max(b[3] for b in boxes),
                )
                out.append(Token("".join(doc.chars[k].char for k in run), box, tuple(run)))
                run = []
    return out


def check_box(box, width: int, height: int, what: str) -> None:
    if len(box) != 4:
        raise DocumentError(f"{what}: box must have 4 coordinates, got {box}")
    x0, y0, x1, y1 = box
    if not x0 < x1:
        raise DocumentError(f"{what}: x0 < x1 violated in {tuple(box)}")
    if not y0 < y1:
        raise DocumentError(f"{what}: y0 < y1 violated in {tuple(box)}")
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
        raise DocumentError(f"{what}: box {tuple(box)} outside page {width}x{height}")


def validate(doc: Document, catalog: ClassCatalog = DEFAULT_CATALOG) -> None:
    """Raise :class:`DocumentError` naming the document on the first violated invariant."""
    where = f"document {doc.id}"
    if doc.width <= 0 or doc.height <= 0:
        raise DocumentError(f"{where}: non-positive page size {doc.width}x{doc.height}")
    if doc.raster.shape != (doc.height, doc.width, 3):
        raise DocumentError(f"{where}: raster shape {doc.raster.shape} != ({doc.height}, {doc.width}, 3)")
    if doc.raster.size and (doc.raster.min() < 0 or doc.raster.max() > 1 or not np.all(np.isfinite(doc.raster))):
        raise DocumentError(f"{where}: raster values outside [0, 1]")
    for k, ch in enumerate(doc.chars):
        if len(ch.char) != 1:
            raise DocumentError(f"{where}: char {k} is not a single character: {ch.char!r}")
        check_box(ch.box, doc.width, doc.height, f"{where}, char {k}")
    owner = [0] * len(doc.chars)
    for k, s in enumerate(doc.sentences):
        check_box(s.box, doc.width, doc.height, f"{where}, sentence {k}")
        idx = s.char_indices
        if not idx:
            raise DocumentError(f"{where}, sentence {k}: empty charIdx")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise DocumentError(f"{where}, sentence {k}: charIdx not strictly increasing")
        for ci in idx:
            if not 0 <= ci < len(doc.chars):
                raise DocumentError(f"{where}, sentence {k}: charIdx {ci} out of range")
            owner[ci] += 1
    bad = [k for k, c in enumerate(owner) if c != 1]
    if bad:
        raise DocumentError(f"{where}: char {bad[0]} belongs to {owner[bad[0]]} sentences (expected 1)")
    for k, r in enumerate(doc.regions):
        check_box(r.box, doc.width, doc.height, f"{where}, region {k}")
        if not 0 <= r.class_id < catalog.count:
            raise DocumentError(f"{where}, region {k}: class id {r.class_id} out of range")
    if doc.token_labels is not None:
        ntok = len(doc.tokens())
        if len(doc.token_labels) != ntok:
            raise DocumentError(f"{where}: {len(doc.token_labels)} token labels for {ntok} tokens")
        if any(not 0 <= c < catalog.count for c in doc.token_labels):
            raise DocumentError(f"{where}: token label out of range")


def box_iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union
