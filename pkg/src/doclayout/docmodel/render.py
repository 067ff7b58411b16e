"""Deterministic page rasterisation from characters and regions."""

from __future__ import annotations

import numpy as np

from .types import DEFAULT_CATALOG, ClassCatalog

PAPER = 1.0
INK = 0.125
RULE = 0.375
# every intensity is a dyadic fraction, so float32 storage is exact


def render_page(
    width: int,
    height: int,
    chars,
    regions,
    catalog: ClassCatalog = DEFAULT_CATALOG,
    glyph_h: int = 4,
) -> np.ndarray:
    """Draw regions' textures, then one ink block per non-space character.

    Figures get a diagonal stripe pattern and tables get a border plus one
    horizontal rule every ``glyph_h + 2`` rows. Text classes have no region
    texture at all, so they are told apart only by what the glyphs spell.
    """
    img = np.full((height, width, 3), PAPER, dtype=np.float32)
    names = catalog.names
    for r in regions:
        x0, y0, x1, y1 = r.box
        kind = names[r.class_id] if r.class_id < len(names) else ""
        if kind == "Figure":
            yy, xx = np.mgrid[y0:y1, x0:x1]
            v = np.where(((xx + yy) // 2) % 2 == 0, 0.25, 0.75)
            img[y0:y1, x0:x1, 0] = v
            img[y0:y1, x0:x1, 1] = 0.5
            img[y0:y1, x0:x1, 2] = 1.0 - v
        elif kind == "Table":
            pitch = glyph_h + 2
            img[y0:y1, x0] = RULE
            img[y0:y1, x1 - 1] = RULE
            for y in range(y0, y1, pitch):
                img[y, x0:x1] = RULE
            img[y1 - 1, x0:x1] = RULE
    for ch in chars:
        if ch.char.isspace():
            continue
        x0, y0, x1, y1 = ch.box
        gx1 = max(x0 + 1, x1 - 1)
        gy0 = y0 + 1 if y1 - y0 > 2 else y0
        gy1 = max(gy0 + 1, y1 - 1)
        img[gy0:gy1, x0:gx1] = INK
    return img
