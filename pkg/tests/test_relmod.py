import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doclayout import numcore as nc
from doclayout.numcore import ParamStore, Tensor, grad_check
from doclayout.relmod import (
    CandidateError,
    RefinedPrediction,
    RelationConfig,
    RelationModule,
    decode_boxes,
    dump_attention,
    encode_boxes,
    nms,
    pos_embed,
    post_process,
    refine,
    roi_align,
)

from .oracles import random_box, ref_nms

W = H = 64


def random_graph_inputs(rng, n, feat=4):
    fmap = Tensor(rng.normal(size=(16, 16, feat)))
    boxes = np.array([random_box(rng, 40.0) for _ in range(n)])
    return fmap, boxes, rng.uniform(size=n)


def module(cfg=RelationConfig(d_node=16, heads=2, layers=2, num_outputs=6), feat=4, seed=0):
    return RelationModule(ParamStore(seed), feat, cfg)


class TestRoIAlign:
    def test_constant_map(self):
        fmap = Tensor(np.full((8, 8, 2), 3.5))
        out = roi_align(fmap, [[3.0, 5.0, 20.0, 17.0]], 4.0, 3).data
        np.testing.assert_array_equal(out, 3.5)

    def test_one_cell_of_one_hot_map(self):
        fmap = np.zeros((4, 4, 1))
        fmap[1, 2, 0] = 1.0
        # stride 4: cell (1,2) covers x in [8,12), y in [4,8); 2x2 bins
        out = roi_align(Tensor(fmap), [[8.0, 4.0, 12.0, 8.0]], 4.0, 2).data[0]
        # bin centres at x = 9, 11 -> fx = 1.75, 2.25; y = 5, 7 -> fy = 0.75, 1.25
        wx = {1.75: 0.75, 2.25: 0.75}
        wy = {0.75: 0.75, 1.25: 0.75}
        expected = [wy[fy] * wx[fx] for fy in (0.75, 1.25) for fx in (1.75, 2.25)]
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_degenerate_box(self):
        with pytest.raises(CandidateError):
            roi_align(Tensor(np.zeros((4, 4, 1))), [[3.0, 3.0, 3.0, 5.0]], 4.0)

    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        fmap = Tensor(rng.normal(size=(6, 6, 2)), requires_grad=True)
        boxes = [[1.0, 2.0, 17.0, 9.0], [0.0, 0.0, 24.0, 24.0]]
        wt = Tensor(rng.uniform(0.5, 1.5, (2, 18)))
        rep = grad_check(lambda: nc.sum_(nc.mul(roi_align(fmap, boxes, 4.0), wt)), {"fmap": fmap})
        assert rep.passed(1e-4)


class TestPosEmbed:
    def test_identical_boxes(self):
        e = pos_embed([[1, 2, 3, 4], [1, 2, 3, 4]], W, H, 16)
        np.testing.assert_array_equal(e[0], e[1])

    def test_full_page_zero_phase(self):
        e = pos_embed([[0, 0, W, H]], W, H, 16).reshape(4, 2, 2)
        np.testing.assert_array_equal(e[:2, :, 0], 0.0)  # sin(0) for x0, y0
        np.testing.assert_array_equal(e[:2, :, 1], 1.0)  # cos(0)

    def test_no_collisions_on_fuzz(self):
        rng = np.random.default_rng(2)
        boxes = np.array([random_box(rng, 50.0) for _ in range(1000)])
        shifted = boxes + np.array([W, 0, W, 0])
        e = pos_embed(np.concatenate([boxes, shifted]), W, H, 64)
        rounded = {tuple(np.round(r, 9)) for r in e}
        assert len(rounded) == len(e)


class TestBoxCoder:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_roundtrip(self, seed):
        rng = np.random.default_rng(seed)
        ref = np.array([random_box(rng) for _ in range(5)])
        tgt = np.array([random_box(rng) for _ in range(5)])
        np.testing.assert_allclose(decode_boxes(encode_boxes(tgt, ref), ref), tgt, atol=1e-9)

    def test_zero_offsets_identity(self):
        ref = np.array([[1.3, 2.7, 9.1, 4.4]])
        np.testing.assert_array_equal(decode_boxes(np.zeros((1, 4)), ref), ref)


class TestRelationModule:
    def test_single_candidate(self):
        rng = np.random.default_rng(0)
        m = module()
        fmap, boxes, scores = random_graph_inputs(rng, 1)
        g = m.build_nodes(fmap, 4.0, boxes, scores, W, H)
        out = m(g)
        assert g.n == 1
        for a in out.attention:
            np.testing.assert_array_equal(a, 1.0)

    def test_empty_candidates(self):
        with pytest.raises(CandidateError):
            module().build_nodes(Tensor(np.zeros((16, 16, 4))), 4.0, np.zeros((0, 4)), [], W, H)

    def test_node_vectors_are_normalised(self):
        rng = np.random.default_rng(1)
        m = module()
        g = m.build_nodes(*random_graph_inputs(rng, 5)[:1], 4.0, *random_graph_inputs(rng, 5)[1:], W, H)
        assert np.abs(g.z.data.mean(axis=-1)).max() < 1e-9

    def test_identical_nodes_identical_outputs(self):
        m = module()
        fmap = Tensor(np.random.default_rng(3).normal(size=(16, 16, 4)))
        boxes = np.array([[4.0, 4.0, 20.0, 12.0]] * 3)
        out = m(m.build_nodes(fmap, 4.0, boxes, np.ones(3), W, H))
        np.testing.assert_array_equal(out.logits.data[0], out.logits.data[2])

    def test_two_node_hand_attention(self):
        # one head, d_k = 2, fixed projections; compare with direct evaluation
        cfg = RelationConfig(d_node=8, heads=1, layers=1, num_outputs=2)
        m = module(cfg, feat=1)
        layer = m.layers[0]
        eye = np.eye(8)
        layer["q"].data, layer["k"].data, layer["v"].data = eye * 0.5, eye, eye * 2.0
        z = np.random.default_rng(4).normal(size=(2, 8))
        q, k, v = z * 0.5, z, z * 2.0
        s = q @ k.T / np.sqrt(8)
        a = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
        expected = a @ v
        out, weights = nc.attention(Tensor(q[None]), Tensor(k[None]), Tensor(v[None]))
        np.testing.assert_allclose(weights[0], a, atol=1e-14)
        np.testing.assert_allclose(out.data[0], expected, atol=1e-14)

    def test_zero_cls_uniform_probs(self):
        rng = np.random.default_rng(5)
        m = module()
        m.cls_w.data[:] = 0.0
        out = m(m.build_nodes(*random_graph_inputs(rng, 4)[:1], 4.0, *random_graph_inputs(rng, 4)[1:], W, H))
        np.testing.assert_allclose(nc.softmax(out.logits).data, 1 / 6, atol=1e-15)

    def test_zero_reg_is_identity_refiner(self):
        rng = np.random.default_rng(6)
        m = module()
        fmap, boxes, scores = random_graph_inputs(rng, 6)
        g = m.build_nodes(fmap, 4.0, boxes, scores, W, H)
        preds = refine(g, m(g))
        for p, b in zip(preds, g.boxes):
            assert p.box == tuple(b)
            assert abs(p.probs.sum() - 1) < 1e-9

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        m = module()
        for _ in range(20):
            n = int(rng.integers(1, 9))
            fmap, boxes, scores = random_graph_inputs(rng, n)
            perm = rng.permutation(n)
            a = m(m.build_nodes(fmap, 4.0, boxes, scores, W, H))
            b = m(m.build_nodes(fmap, 4.0, boxes[perm], scores[perm], W, H))
            np.testing.assert_array_equal(a.logits.data[perm], b.logits.data)
            np.testing.assert_array_equal(a.z.data[perm], b.z.data)

    def test_gradcheck_through_stack(self):
        rng = np.random.default_rng(8)
        store = ParamStore(9)
        m = RelationModule(store, 2, RelationConfig(d_node=8, heads=2, layers=2, num_outputs=3))
        m.reg_w.data = rng.uniform(-0.1, 0.1, m.reg_w.shape)
        fmap = Tensor(rng.normal(size=(8, 8, 2)))
        boxes = np.array([random_box(rng, 25.0) for _ in range(4)])
        labels = np.array([0, 2, 1, 2])

        def f():
            out = m(m.build_nodes(fmap, 4.0, boxes, np.ones(4), 32, 32))
            return nc.add(nc.cross_entropy(out.logits, labels), nc.sum_(nc.mul(out.offsets, out.offsets)))

        rep = grad_check(f, {p.name: p for p in store}, max_elements=6)
        assert rep.passed(1e-4), rep.errors

    def test_dump_attention(self, tmp_path):
        rng = np.random.default_rng(9)
        m = module()
        out = m(m.build_nodes(*random_graph_inputs(rng, 3)[:1], 4.0, *random_graph_inputs(rng, 3)[1:], W, H))
        assert len(dump_attention(out.attention, tmp_path, "a")) == 4  # 2 layers x 2 heads


class TestNMS:
    def test_identical_boxes_one_survivor(self):
        assert nms([(0, 0, 4, 4), (0, 0, 4, 4)], [0.9, 0.8], 0.5) == [0]

    def test_disjoint_all_survive(self):
        assert sorted(nms([(0, 0, 2, 2), (5, 5, 7, 7), (10, 0, 12, 2)], [0.1, 0.5, 0.3], 0.5)) == [0, 1, 2]

    def test_tie_break_by_index(self):
        assert nms([(0, 0, 4, 4), (0, 0, 4, 4)], [0.5, 0.5], 0.5) == [0]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 100_000), st.integers(1, 8), st.sampled_from([0.3, 0.5, 0.7]))
    def test_matches_oracle(self, seed, n, thr):
        rng = np.random.default_rng(seed)
        boxes = [random_box(rng, 10.0) for _ in range(n)]
        scores = list(rng.uniform(size=n).round(1))
        assert nms(boxes, scores, thr) == ref_nms(boxes, scores, thr)

    def test_post_process_skips_background_and_dedups(self):
        bg = 2
        preds = [
            RefinedPrediction(np.array([0.7, 0.1, 0.2]), (0.0, 0.0, 10.0, 10.0), 0),
            RefinedPrediction(np.array([0.6, 0.1, 0.3]), (0.5, 0.0, 10.0, 10.0), 1),
            RefinedPrediction(np.array([0.02, 0.01, 0.97]), (20.0, 20.0, 30.0, 30.0), 2),
        ]
        dets = post_process(preds, score_thresh=0.05, nms_iou=0.5, background=bg)
        assert [(d.index, d.class_id) for d in dets] == [(0, 0)]
