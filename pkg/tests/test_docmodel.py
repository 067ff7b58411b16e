import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doclayout.docmodel import (
    DEFAULT_CATALOG,
    CharItem,
    ClassCatalog,
    CorpusError,
    Document,
    DocumentError,
    GenerationError,
    Region,
    SentenceItem,
    SynthSpec,
    box_iou,
    build_vocabularies,
    document_from_json,
    document_to_json,
    dumps_corpus,
    load_corpus,
    render_page,
    save_corpus,
    synthesize,
    validate,
)

CAT = DEFAULT_CATALOG


def tiny_doc(box=(2, 2, 5, 6)):
    chars = (CharItem("a", box),)
    sents = (SentenceItem("a", box, (0,)),)
    regions = (Region((1, 1, 10, 8), CAT.index("Paragraph")),)
    raster = render_page(32, 32, chars, regions, CAT)
    return Document(0, 32, 32, raster, chars, sents, regions, (CAT.index("Paragraph"),))


class TestCatalog:
    def test_index_and_name(self):
        assert CAT.count == 5
        assert CAT.name(CAT.index("Table")) == "Table"

    def test_duplicate_names(self):
        with pytest.raises(ValueError):
            ClassCatalog(("A", "A"))

    def test_unknown_name(self):
        with pytest.raises(DocumentError):
            CAT.index("Footnote")


class TestValidation:
    def test_valid_tiny_doc(self):
        validate(tiny_doc())

    def test_inverted_box_message(self):
        with pytest.raises(DocumentError, match="x0 < x1 violated"):
            validate(tiny_doc((5, 5, 3, 9)))

    def test_out_of_bounds(self):
        with pytest.raises(DocumentError, match="outside page"):
            validate(tiny_doc((30, 2, 33, 6)))

    def test_char_in_two_sentences(self):
        d = tiny_doc()
        bad = Document(0, 32, 32, d.raster, d.chars, d.sentences * 2, d.regions, None)
        with pytest.raises(DocumentError, match="belongs to 2 sentences"):
            validate(bad)

    def test_charidx_must_increase(self):
        chars = (CharItem("a", (0, 0, 3, 4)), CharItem("b", (3, 0, 6, 4)))
        sents = (SentenceItem("ba", (0, 0, 6, 4), (1, 0)),)
        d = Document(0, 32, 32, np.ones((32, 32, 3), np.float32), chars, sents)
        with pytest.raises(DocumentError, match="strictly increasing"):
            validate(d)

    def test_raster_range(self):
        d = tiny_doc()
        r = d.raster.copy()
        r[0, 0, 0] = 1.5
        with pytest.raises(DocumentError, match="outside"):
            validate(Document(0, 32, 32, r, d.chars, d.sentences, d.regions))

    def test_token_label_count(self):
        d = tiny_doc()
        with pytest.raises(DocumentError, match="token labels"):
            validate(Document(0, 32, 32, d.raster, d.chars, d.sentences, d.regions, (0, 1)))


class TestTokens:
    def test_words_split_on_spaces(self):
        chars = tuple(CharItem(c, (3 * i, 0, 3 * i + 3, 4)) for i, c in enumerate("ab cd"))
        sents = (SentenceItem("ab cd", (0, 0, 15, 4), tuple(range(5))),)
        d = Document(0, 32, 32, np.ones((32, 32, 3), np.float32), chars, sents)
        toks = d.tokens()
        assert [t.text for t in toks] == ["ab", "cd"]
        assert toks[1].box == (9, 0, 15, 4)
        assert toks[1].char_indices == (3, 4)


class TestCorpusIO:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text("")
        assert load_corpus(p) == []

    def test_save_empty(self, tmp_path):
        p = tmp_path / "c.jsonl"
        save_corpus([], p)
        assert p.read_text() == ""

    def test_tiny_roundtrip(self, tmp_path):
        p = tmp_path / "c.jsonl"
        d = tiny_doc()
        save_corpus([d], p)
        (back,) = load_corpus(p)
        assert back == d and back.n == 1 and back.m == 1

    def test_synthetic_roundtrip(self, tmp_path):
        p = tmp_path / "c.jsonl"
        docs = synthesize(3, 5)
        save_corpus(docs, p)
        assert load_corpus(p) == docs

    def test_explicit_raster_roundtrip(self):
        d = tiny_doc()
        noisy = Document(0, 32, 32, (d.raster * np.float32(0.5)), d.chars, d.sentences, d.regions, d.token_labels)
        rec = document_to_json(noisy)
        assert "raster" in rec
        assert document_from_json(rec) == noisy

    def test_omitted_raster_rerenders(self):
        rec = document_to_json(tiny_doc())
        assert "raster" not in rec

    def test_byte_stable_saves(self):
        docs = synthesize(9, 100)
        h1 = hashlib.sha256(dumps_corpus(docs).encode()).hexdigest()
        h2 = hashlib.sha256(dumps_corpus(synthesize(9, 100)).encode()).hexdigest()
        assert h1 == h2

    def test_malformed_json_reports_line(self, tmp_path):
        p = tmp_path / "c.jsonl"
        good = json.dumps(document_to_json(tiny_doc()))
        p.write_text(good + "\n{not json\n")
        with pytest.raises(CorpusError, match=":2:"):
            load_corpus(p)

    def test_bad_box_names_document(self, tmp_path):
        rec = document_to_json(tiny_doc())
        rec["id"] = 17
        rec["chars"][0]["box"] = [5, 5, 3, 9]
        p = tmp_path / "c.jsonl"
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(DocumentError, match="document 17.*x0 < x1 violated"):
            load_corpus(p)

    def test_missing_field(self):
        with pytest.raises(CorpusError):
            document_from_json({"id": 0, "width": 32})


class TestSynthesis:
    def test_zero_count(self):
        assert synthesize(1, 0) == []

    def test_negative_count(self):
        with pytest.raises(GenerationError):
            synthesize(1, -1)

    def test_deterministic(self):
        assert synthesize(1, 8) == synthesize(1, 8)

    def test_document_depends_only_on_seed_and_index(self):
        assert synthesize(4, 6)[5] == synthesize(4, 8)[5]

    def test_infeasible_page(self):
        with pytest.raises(GenerationError):
            synthesize(0, 1, SynthSpec(width=16, height=16))

    def test_regions_disjoint_and_figures_captioned(self):
        docs = synthesize(1, 100)
        fig, cap = CAT.index("Figure"), CAT.index("FigureCaption")
        n_fig = 0
        for d in docs:
            regs = d.regions
            for i in range(len(regs)):
                for j in range(i + 1, len(regs)):
                    assert box_iou(regs[i].box, regs[j].box) == 0.0
            for r in regs:
                if r.class_id != fig:
                    continue
                n_fig += 1
                below = [c for c in regs if c.class_id == cap and c.box[1] == r.box[3] + 1
                         and c.box[0] < r.box[2] and r.box[0] < c.box[2]]
                assert below, f"figure without caption in document {d.id}"
        assert n_fig > 10

    def test_every_document_valid_over_1000_seeds(self):
        for seed in range(1000):
            (d,) = synthesize(seed, 1)
            validate(d)

    def test_chars_tile_sentence_left_to_right(self):
        for d in synthesize(2, 20):
            for s in d.sentences:
                boxes = [d.chars[i].box for i in s.char_indices]
                assert boxes[0][0] == s.box[0] and boxes[-1][2] == s.box[2]
                for a, b in zip(boxes, boxes[1:]):
                    assert a[2] == b[0] and a[1] == b[1] == s.box[1]

    def test_twin_classes_share_appearance(self):
        spec = SynthSpec()
        vocab = build_vocabularies(spec)
        par, cap = vocab["Paragraph"], vocab["FigureCaption"]
        assert set(par) == set(cap)  # same word lengths
        words_p = {w for ws in par.values() for w in ws}
        words_c = {w for ws in cap.values() for w in ws}
        assert not words_p & words_c

    def test_all_classes_appear(self):
        seen = {r.class_id for d in synthesize(0, 50) for r in d.regions}
        assert seen == set(range(CAT.count))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_token_labels_cover_every_token(self, seed):
        (d,) = synthesize(seed, 1)
        assert len(d.token_labels) == len(d.tokens())
        assert d.raster.dtype == np.float32
