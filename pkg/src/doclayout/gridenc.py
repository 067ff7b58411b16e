"""Text embedding maps: CharGrid, SentGrid and their normalised sum S0."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numcore as nc
from .docmodel import Document
from .numcore import ParamStore, Tensor

CHAR_VOCAB = [chr(c) for c in range(32, 127)]
_CHAR_INDEX = {c: i for i, c in enumerate(CHAR_VOCAB)}
OOV = len(CHAR_VOCAB)
WORD_BUCKETS = 4096


def char_id(c: str) -> int:
    return _CHAR_INDEX.get(c, OOV)


def word_bucket(word: str, buckets: int = WORD_BUCKETS) -> int:
    return zlib.crc32(word.encode("utf-8")) % buckets


class HashedBagOfWords:
    """Sentence encoder: mean of hashed word-table rows.

    Any object with ``encode(texts) -> Tensor[m, C]`` can stand in for it.
    """

    def __init__(self, store: ParamStore, dim: int, buckets: int = WORD_BUCKETS, prefix: str = "grid.word"):
        self.buckets = buckets
        self.table = store.uniform(prefix, (buckets, dim), fan_in=1)

    def encode(self, texts) -> Tensor:
        rows = []
        for text in texts:
            words = text.split()
            row = np.zeros(self.buckets)
            for w in words:  # whitespace-only text encodes to zero
                row[word_bucket(w, self.buckets)] += 1.0 / len(words)
            rows.append(row)
        weights = np.array(rows).reshape(len(rows), self.buckets)
        return nc.matmul(Tensor(weights), self.table)


@dataclass
class EmbeddingTables:
    char_table: nc.Parameter
    sent_encoder: HashedBagOfWords
    gamma: nc.Parameter
    beta: nc.Parameter

    @property
    def dim(self) -> int:
        return self.char_table.shape[1]

    @classmethod
    def create(cls, store: ParamStore, dim: int = 64, prefix: str = "grid") -> "EmbeddingTables":
        char_table = store.uniform(f"{prefix}.char", (len(CHAR_VOCAB) + 1, dim), fan_in=1)
        enc = HashedBagOfWords(store, dim, prefix=f"{prefix}.word")
        gamma = store.ones(f"{prefix}.ln.gamma", (dim,))
        beta = store.zeros(f"{prefix}.ln.beta", (dim,))
        return cls(char_table, enc, gamma, beta)


@dataclass
class EmbeddingMaps:
    char_grid: Tensor
    sent_grid: Tensor
    s0: Tensor


def _index_map(height: int, width: int, boxes) -> np.ndarray:
    """Item index per pixel, -1 where no box covers it; later items overwrite earlier ones."""
    idx = np.full((height, width), -1, dtype=np.int64)
    for k, (x0, y0, x1, y1) in enumerate(boxes):
        idx[y0:y1, x0:x1] = k
    return idx


def build_char_grid(doc: Document, tables: EmbeddingTables) -> Tensor:
    owner = _index_map(doc.height, doc.width, [c.box for c in doc.chars])
    ids = np.array([char_id(c.char) for c in doc.chars] + [-1], dtype=np.int64)
    return nc.embedding(tables.char_table, ids[owner])


def build_sent_grid(doc: Document, tables: EmbeddingTables) -> Tensor:
    if not doc.sentences:
        return Tensor(np.zeros((doc.height, doc.width, tables.dim)))
    owner = _index_map(doc.height, doc.width, [s.box for s in doc.sentences])
    vecs = tables.sent_encoder.encode([s.text for s in doc.sentences])
    return nc.embedding(vecs, owner)


def build_s0(doc: Document, tables: EmbeddingTables, use_char: bool = True, use_sent: bool = True) -> EmbeddingMaps:
    """``s0 = layer_norm(char_grid + sent_grid)`` per pixel over channels.

    ``use_char`` / ``use_sent`` replace the corresponding grid with zeros
    (granularity ablations).
    """
    zero = Tensor(np.zeros((doc.height, doc.width, tables.dim)))
    cg = build_char_grid(doc, tables) if use_char else zero
    sg = build_sent_grid(doc, tables) if use_sent else zero
    s0 = nc.layer_norm(nc.add(cg, sg), tables.gamma, tables.beta)
    return EmbeddingMaps(cg, sg, s0)


def write_pgm(path, img: np.ndarray) -> tuple[float, float]:
    """Write a 2-D array as binary PGM, min..max mapped linearly onto 0..255."""
    a = np.asarray(img, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros(a.shape) if hi == lo else (a - lo) / (hi - lo) * 255.0
    pix = np.round(scaled).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())
    return lo, hi


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def dump_grid(grid: Tensor, out_dir, stem: str) -> list[Path]:
    """One PGM per channel plus ``<stem>.json`` recording each channel's min/max."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = grid.data
    ranges = {}
    paths = []
    for c in range(data.shape[-1]):
        p = out / f"{stem}_c{c:03d}.pgm"
        lo, hi = write_pgm(p, data[..., c])
        ranges[p.name] = {"min": lo, "max": hi}
        paths.append(p)
    (out / f"{stem}.json").write_text(json.dumps(ranges, indent=1, sort_keys=True))
    return paths
