"""Finite-difference checks for every differentiable operation and the composed model.

``CHECKS`` maps a check name to a zero-argument callable returning a
:class:`~doclayout.numcore.GradCheckReport`. The CLI and the test suite
both run from this registry; tests may pass their own registry to inject
deliberately broken operations.
"""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from . import numcore as nc
from .numcore import GradCheckReport, Tensor, grad_check

TOLERANCE = 1e-4


def _rng(name: str) -> np.random.Generator:
    return np.random.default_rng(sum(map(ord, name)))


def _t(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _check(name: str, build: Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict]]):
    def check() -> GradCheckReport:
        rng = _rng(name)
        f, inputs = build(rng)
        proj_rng = np.random.default_rng(1)
        cache: dict = {}

        def scalar():
            out = f()
            if out.data.size == 1:
                return out
            if "w" not in cache:
                cache["w"] = Tensor(proj_rng.uniform(0.5, 1.5, size=out.shape))
            return nc.sum_(nc.mul(out, cache["w"]))

        return grad_check(scalar, inputs)

    return check


def _binary(fn, sa=(3, 4), sb=(3, 4)):
    def build(rng):
        a, b = _t(rng, *sa), _t(rng, *sb)
        return (lambda: fn(a, b)), {"a": a, "b": b}

    return build


def _unary_build(fn, shape=(3, 4), lo=-2.0, hi=2.0):
    def build(rng):
        x = _t(rng, *shape, lo=lo, hi=hi)
        return (lambda: fn(x)), {"x": x}

    return build


def _layer_norm(rng):
    x, g, b = _t(rng, 3, 5), _t(rng, 5), _t(rng, 5)
    return (lambda: nc.layer_norm(x, g, b)), {"x": x, "gamma": g, "beta": b}


def _cross_entropy(rng):
    x = _t(rng, 4, 5, lo=-3, hi=3)
    y = np.array([0, 3, 4, 1])
    return (lambda: nc.cross_entropy(x, y)), {"logits": x}


def _smooth_l1(rng):
    p = Tensor(np.array([[0.3, -2.0], [1.7, -0.4]]), requires_grad=True)
    t = Tensor(np.zeros((2, 2)))
    return (lambda: nc.smooth_l1(p, t)), {"pred": p}


def _conv(stride, pad, k, size=8):
    def build(rng):
        x, w, b = _t(rng, size, size, 3), _t(rng, k, k, 3, 4), _t(rng, 4)
        return (lambda: nc.conv2d(x, w, b, stride=stride, pad=pad)), {"x": x, "w": w, "b": b}

    return build


def _embedding(rng):
    table = _t(rng, 6, 3)
    idx = np.array([[0, 5, -1], [2, 2, 1]])
    return (lambda: nc.embedding(table, idx)), {"table": table}


def _bilinear(rng):
    fmap = _t(rng, 5, 6, 3)
    ys = np.array([0.3, 2.7, -0.4, 3.9])
    xs = np.array([1.2, 4.6, 0.5, 5.3])
    return (lambda: nc.bilinear_sample(fmap, ys, xs)), {"fmap": fmap}


def _rowwise(rng):
    x, w, b = _t(rng, 4, 6), _t(rng, 6, 3), _t(rng, 3)
    return (lambda: nc.rowwise_linear(x, w, b)), {"x": x, "w": w, "b": b}


def _attention(rng):
    q, k, v = _t(rng, 2, 4, 3), _t(rng, 2, 4, 3), _t(rng, 2, 4, 5)
    return (lambda: nc.attention(q, k, v)[0]), {"q": q, "k": k, "v": v}


def _index(rng):
    x = _t(rng, 4, 5)
    rows, cols = np.array([0, 2, 2, 3]), np.array([1, 4, 4, 0])
    return (lambda: nc.index(x, (rows, cols))), {"x": x}


def _roi_align(rng):
    from .relmod import roi_align

    fmap = _t(rng, 8, 8, 3)
    boxes = np.array([[1.5, 2.0, 20.0, 13.0], [0.0, 0.0, 31.0, 9.5]])
    return (lambda: roi_align(fmap, boxes, 4.0, 3)), {"fmap": fmap}


def _adaptive(rng):
    from .fusenet import adaptive_aggregate

    v, s = _t(rng, 4, 4, 3), _t(rng, 4, 4, 3)
    w, b = _t(rng, 1, 1, 6, 3), _t(rng, 3)
    return (lambda: adaptive_aggregate(v, s, w, b)[1]), {"v": v, "s": s, "w": w, "b": b}


def _concat_agg(rng):
    from .fusenet import concat_aggregate

    v, s = _t(rng, 4, 4, 3), _t(rng, 4, 4, 3)
    w, b = _t(rng, 1, 1, 6, 3), _t(rng, 3)
    return (lambda: concat_aggregate(v, s, w, b)), {"v": v, "s": s, "w": w, "b": b}


def _tiny_model(mode: str, **kw):
    from .docmodel import synthesize
    from .pipeline import LayoutModel, TrainConfig

    cfg = TrainConfig(mode=mode, sem_dim=4, channels=(4, 4, 4, 4), fpn_dim=4, d_node=8, heads=2, rm_layers=1,
                      seed=3, **kw)
    model = LayoutModel(cfg)
    rng = np.random.default_rng(5)
    # Move zero-initialised parameters off zero: zero biases over blank page
    # regions put pre-activations exactly on the relu kink, where central
    # differences and the analytic subgradient legitimately disagree.
    for p in model.store:
        if not np.any(p.data):
            p.data = rng.uniform(-0.3, 0.3, size=p.data.shape)
    return model, synthesize(11, 1)[0]


def model_check(mode: str, max_elements: int = 2) -> Callable[[], GradCheckReport]:
    """Composed check: grids, both streams, fusion, FPN, relation module and the task loss."""

    def check() -> GradCheckReport:
        model, doc = _tiny_model(mode)
        if mode == "sequence":
            f = lambda: model.forward_sequence(doc).loss.total  # noqa: E731
        else:
            with nc.no_grad():
                head = model.head(model.pyramid(doc).p[1])
            boxes, scores = model.candidate_boxes(doc, head, training=True, rng=None)
            frozen = (boxes, scores)
            f = lambda: model.forward_detection(doc, frozen=frozen).loss.total  # noqa: E731
        return grad_check(f, {p.name: p for p in model.store}, max_elements=max_elements, seed=0)

    return check


CHECKS: dict[str, Callable[[], GradCheckReport]] = {
    "add": _check("add", _binary(nc.add, (3, 4), (4,))),
    "sub": _check("sub", _binary(nc.sub, (3, 1), (3, 4))),
    "mul": _check("mul", _binary(nc.mul)),
    "matmul": _check("matmul", _binary(nc.matmul, (2, 3, 4), (4, 5))),
    "linear": _check("linear", lambda rng: (lambda x, w, b: ((lambda: nc.linear(x, w, b)), {"x": x, "w": w, "b": b}))(
        _t(rng, 3, 4), _t(rng, 4, 2), _t(rng, 2))),
    "relu": _check("relu", _unary_build(nc.relu)),
    "sigmoid": _check("sigmoid", _unary_build(nc.sigmoid, lo=-5, hi=5)),
    "exp": _check("exp", _unary_build(nc.exp)),
    "log": _check("log", _unary_build(nc.log, lo=0.2, hi=3.0)),
    "sum": _check("sum", _unary_build(lambda x: nc.sum_(x, axis=0))),
    "mean": _check("mean", _unary_build(lambda x: nc.mean(x, axis=1, keepdims=True))),
    "reshape": _check("reshape", _unary_build(lambda x: nc.reshape(x, (2, 6)))),
    "transpose": _check("transpose", _unary_build(lambda x: nc.transpose(x, (1, 0)))),
    "index": _check("index", _index),
    "concat": _check("concat", _binary(lambda a, b: nc.concat([a, b], axis=1), (3, 2), (3, 4))),
    "stack": _check("stack", _binary(lambda a, b: nc.stack([a, b], axis=1))),
    "softmax": _check("softmax", _unary_build(nc.softmax, lo=-3, hi=3)),
    "logSoftmax": _check("logSoftmax", _unary_build(nc.log_softmax, lo=-3, hi=3)),
    "layerNorm": _check("layerNorm", _layer_norm),
    "crossEntropy": _check("crossEntropy", _cross_entropy),
    "smoothL1": _check("smoothL1", _smooth_l1),
    "conv2d": _check("conv2d", _conv(1, 1, 3)),
    "conv2dStrided": _check("conv2dStrided", _conv(2, 1, 3, size=9)),
    "conv1x1": _check("conv1x1", _conv(1, 0, 1)),
    "maxPool2d": _check("maxPool2d", _unary_build(nc.max_pool2d, shape=(4, 6, 2))),
    "upsample2x": _check("upsample2x", _unary_build(nc.upsample2x, shape=(2, 3, 2))),
    "embedding": _check("embedding", _embedding),
    "bilinearSample": _check("bilinearSample", _bilinear),
    "rowwiseLinear": _check("rowwiseLinear", _rowwise),
    "attention": _check("attention", _attention),
    "roiAlign": _check("roiAlign", _roi_align),
    "adaptiveAggregate": _check("adaptiveAggregate", _adaptive),
    "concatAggregate": _check("concatAggregate", _concat_agg),
    "sequenceModel": model_check("sequence"),
    "detectionModel": model_check("detection"),
}


def run_checks(registry: dict[str, Callable[[], GradCheckReport]] | None = None, only: str | None = None,
               tol: float = TOLERANCE) -> list[tuple[str, float, bool]]:
    """(name, max relative error, passed) per check; ``only`` filters by exact name (case-insensitive)."""
    registry = CHECKS if registry is None else registry
    names = [n for n in registry if only is None or n.lower() == only.lower()]
    rows = []
    for name in names:
        rep = registry[name]()
        rows.append((name, rep.max_error, rep.passed(tol)))
    return rows
