import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doclayout import numcore as nc
from doclayout.docmodel import CharItem, Document, SentenceItem, synthesize
from doclayout.gridenc import (
    EmbeddingTables,
    HashedBagOfWords,
    build_char_grid,
    build_s0,
    build_sent_grid,
    char_id,
    dump_grid,
    read_pgm,
    word_bucket,
    write_pgm,
)
from doclayout.numcore import ParamStore, grad_check


def page(chars=(), sents=(), w=8, h=6):
    return Document(0, w, h, np.ones((h, w, 3), np.float32), tuple(chars), tuple(sents))


@pytest.fixture
def tables():
    return EmbeddingTables.create(ParamStore(0), dim=8)


def brute_last_wins(h, w, boxes, vecs, dim):
    out = np.zeros((h, w, dim))
    for i in range(h):
        for j in range(w):
            for (x0, y0, x1, y1), v in zip(boxes, vecs):
                if x0 <= j < x1 and y0 <= i < y1:
                    out[i, j] = v
    return out


class TestCharGrid:
    def test_no_chars_is_zero(self, tables):
        assert not np.any(build_char_grid(page(), tables).data)

    def test_single_char_fills_its_box(self, tables):
        g = build_char_grid(page([CharItem("q", (0, 0, 2, 2))]), tables).data
        v = tables.char_table.data[char_id("q")]
        np.testing.assert_array_equal(g[:2, :2], np.broadcast_to(v, (2, 2, 8)))
        g[:2, :2] = 0
        assert not np.any(g)

    @pytest.mark.parametrize("order", [("a", "b"), ("b", "a")])
    def test_overlap_last_wins(self, tables, order):
        boxes = [(0, 0, 4, 3), (2, 1, 6, 5)]
        chars = [CharItem(c, b) for c, b in zip(order, boxes)]
        g = build_char_grid(page(chars), tables).data
        vecs = [tables.char_table.data[char_id(c)] for c in order]
        np.testing.assert_array_equal(g, brute_last_wins(6, 8, boxes, vecs, 8))

    def test_unknown_char_uses_oov_row(self, tables):
        g = build_char_grid(page([CharItem("é", (0, 0, 1, 1))]), tables).data
        np.testing.assert_array_equal(g[0, 0], tables.char_table.data[-1])

    def test_coverage_partition(self, tables):
        (doc,) = synthesize(3, 1)
        g = build_char_grid(doc, tables).data
        covered = np.zeros((doc.height, doc.width), bool)
        for c in doc.chars:
            x0, y0, x1, y1 = c.box
            covered[y0:y1, x0:x1] = True
        np.testing.assert_array_equal(np.any(g != 0, axis=-1), covered)

    def test_locality(self, tables):
        (doc,) = synthesize(3, 1)
        k = next(i for i, c in enumerate(doc.chars) if c.char != " ")
        edited = list(doc.chars)
        edited[k] = CharItem("Z" if doc.chars[k].char != "Z" else "Y", doc.chars[k].box)
        doc2 = Document(doc.id, doc.width, doc.height, doc.raster, tuple(edited), doc.sentences)
        diff = np.any(build_char_grid(doc, tables).data != build_char_grid(doc2, tables).data, axis=-1)
        x0, y0, x1, y1 = doc.chars[k].box
        assert diff[y0:y1, x0:x1].all()
        diff[y0:y1, x0:x1] = False
        assert not diff.any()


class TestSentGrid:
    def test_no_sentences_is_zero(self, tables):
        assert not np.any(build_sent_grid(page(), tables).data)

    def test_mean_of_word_rows(self, tables):
        chars = [CharItem(c, (i, 0, i + 1, 1)) for i, c in enumerate("a b")]
        sents = [SentenceItem("a b", (0, 0, 4, 1), (0, 1, 2))]
        g = build_sent_grid(page(chars, sents), tables).data
        tab = tables.sent_encoder.table.data
        expected = (tab[word_bucket("a")] + tab[word_bucket("b")]) / 2
        for x in range(4):
            np.testing.assert_allclose(g[0, x], expected, atol=1e-15)
        assert not np.any(g[1:])

    def test_identical_text_identical_vectors(self, tables):
        chars = [CharItem("x", (0, 0, 1, 1)), CharItem("x", (0, 3, 1, 4))]
        sents = [SentenceItem("x", (0, 0, 3, 1), (0,)), SentenceItem("x", (0, 3, 3, 4), (1,))]
        g = build_sent_grid(page(chars, sents), tables).data
        np.testing.assert_array_equal(g[0, 0], g[3, 2])

    def test_encoder_is_pluggable(self, tables):
        class Constant:
            def encode(self, texts):
                return nc.Tensor(np.ones((len(texts), 8)))

        tables.sent_encoder = Constant()
        chars = [CharItem("x", (0, 0, 1, 1))]
        g = build_sent_grid(page(chars, [SentenceItem("x", (0, 0, 2, 1), (0,))]), tables).data
        np.testing.assert_array_equal(g[0, :2], 1.0)

    def test_bag_of_words_ignores_order(self):
        enc = HashedBagOfWords(ParamStore(1), 4)
        a, b = enc.encode(["red blue", "blue red"]).data
        np.testing.assert_allclose(a, b, atol=1e-15)


class TestS0:
    def test_empty_document_is_beta(self, tables):
        s0 = build_s0(page(), tables).s0.data
        np.testing.assert_array_equal(s0, 0.0)

    def test_normalised_pixels(self, tables):
        (doc,) = synthesize(5, 1)
        maps = build_s0(doc, tables)
        covered = np.any(maps.char_grid.data + maps.sent_grid.data != 0, axis=-1)
        s0 = maps.s0.data[covered]
        assert np.abs(s0.mean(axis=-1)).max() < 1e-9
        raw = (maps.char_grid.data + maps.sent_grid.data)[covered]
        np.testing.assert_allclose(s0.var(axis=-1), raw.var(axis=-1) / (raw.var(axis=-1) + 1e-5), rtol=1e-9)
        assert np.abs(s0.var(axis=-1) - 1).max() < 1e-3

    def test_ablation_flags_zero_a_grid(self, tables):
        (doc,) = synthesize(5, 1)
        assert not np.any(build_s0(doc, tables, use_char=False).char_grid.data)
        assert not np.any(build_s0(doc, tables, use_sent=False).sent_grid.data)

    def test_grad_wrt_char_table(self):
        store = ParamStore(2)
        tables = EmbeddingTables.create(store, dim=4)
        chars = [CharItem(c, (2 * i, 0, 2 * i + 2, 2)) for i, c in enumerate("ab")]
        doc = page(chars, [SentenceItem("ab", (0, 0, 4, 2), (0, 1))])
        w = nc.Tensor(np.random.default_rng(0).uniform(0.5, 1.5, (6, 8, 4)))
        rep = grad_check(lambda: nc.sum_(nc.mul(build_s0(doc, tables).s0, w)),
                         {"char": tables.char_table, "gamma": tables.gamma}, max_elements=40)
        assert rep.passed(1e-4), rep.errors

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 500))
    def test_deterministic(self, seed):
        (doc,) = synthesize(seed, 1)
        t1 = EmbeddingTables.create(ParamStore(0), dim=4)
        t2 = EmbeddingTables.create(ParamStore(0), dim=4)
        np.testing.assert_array_equal(build_s0(doc, t1).s0.data, build_s0(doc, t2).s0.data)


class TestDumps:
    def test_pgm_roundtrip_scaling(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 0.25]])
        lo, hi = write_pgm(tmp_path / "x.pgm", img)
        assert (lo, hi) == (0.0, 1.0)
        np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), [[0, 128], [255, 64]])

    def test_dump_grid_one_file_per_channel(self, tmp_path, tables):
        (doc,) = synthesize(1, 1)
        paths = dump_grid(build_char_grid(doc, tables), tmp_path, "g")
        assert len(paths) == 8
        assert (tmp_path / "g.json").exists()
        assert read_pgm(paths[0]).shape == (doc.height, doc.width)
