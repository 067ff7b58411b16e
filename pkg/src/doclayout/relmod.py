"""Relation module: self-attention over a complete graph of layout candidates."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .gridenc import write_pgm
from .numcore import ParamStore, Tensor

POS_BASE = 10000.0
POS_SCALE = 100.0
# (dx, dy, dw, dh) are predicted in units scaled by these weights
BOX_CODER_WEIGHTS = (10.0, 10.0, 5.0, 5.0)
MAX_LOG_SCALE = float(np.log(1000.0 / 16))


class CandidateError(ValueError):
    pass


@dataclass(frozen=True)
class RelationConfig:
    d_node: int = 64
    heads: int = 4
    layers: int = 2
    bins: int = 3
    num_outputs: int = 6

    def __post_init__(self):
        if self.d_node % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide d_node ({self.d_node})")
        if self.d_node % 8:
            raise ValueError("d_node must be divisible by 8 for the position embedding")
        if self.layers < 0 or self.bins < 1 or self.num_outputs < 1:
            raise ValueError("invalid relation module configuration")


@dataclass
class DocumentGraph:
    """Complete graph over N candidates; edges are implicit."""

    boxes: np.ndarray  # [N, 4] float page coordinates
    scores: np.ndarray  # [N]
    features: Tensor  # [N, d_node] pooled region features
    z: Tensor  # [N, d_node] node vectors

    @property
    def n(self) -> int:
        return len(self.boxes)


@dataclass
class RefinedPrediction:
    probs: np.ndarray
    box: tuple[float, float, float, float]
    index: int


@dataclass
class RelationOutput:
    logits: Tensor
    offsets: Tensor
    z: Tensor
    attention: list[np.ndarray] = field(default_factory=list)  # one [heads, N, N] per layer


def clamp_boxes(boxes, width: float, height: float) -> np.ndarray:
    b = np.array(boxes, dtype=np.float64).reshape(-1, 4)
    b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0.0, width)
    b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0.0, height)
    return b


def roi_align(fmap: Tensor, boxes, stride: float, bins: int = 3) -> Tensor:
    """Bilinear samples at the centres of a bins x bins grid over each box.

    Returns [N, bins*bins*D]. Box corners are page pixels; a feature cell i
    covers pixels [i*stride, (i+1)*stride), with its centre at (i + 0.5)*stride.
    """
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    for k, (x0, y0, x1, y1) in enumerate(b):
        if not (x1 > x0 and y1 > y0):
            raise CandidateError(f"candidate {k}: degenerate box {(x0, y0, x1, y1)}")
    frac = (np.arange(bins) + 0.5) / bins
    xs = b[:, 0:1] + frac[None, :] * (b[:, 2:3] - b[:, 0:1])  # [N, bins]
    ys = b[:, 1:2] + frac[None, :] * (b[:, 3:4] - b[:, 1:2])
    gy = np.repeat(ys, bins, axis=1)  # row-major over (by, bx)
    gx = np.tile(xs, (1, bins))
    fy = gy / stride - 0.5
    fx = gx / stride - 0.5
    samples = nc.bilinear_sample(fmap, fy.ravel(), fx.ravel())  # [N*bins*bins, D]
    return nc.reshape(samples, (len(b), bins * bins * fmap.shape[-1]))


def pos_embed(boxes, page_w: float, page_h: float, d_node: int) -> np.ndarray:
    """Parameter-free sinusoidal embedding of normalised box corners, [N, d_node].

    Each of x0, y0, x1, y1 gets d_node/4 features: interleaved sin/cos at
    geometric frequencies POS_BASE**(-k/(d_node/8)).
    """
    if d_node % 8:
        raise ValueError("d_node must be divisible by 8")
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    norm = b / np.array([page_w, page_h, page_w, page_h])
    nf = d_node // 8
    freqs = POS_BASE ** (-np.arange(nf) / nf)
    phase = POS_SCALE * norm[:, :, None] * freqs[None, None, :]  # [N, 4, nf]
    out = np.empty((len(b), 4, nf, 2))
    out[..., 0] = np.sin(phase)
    out[..., 1] = np.cos(phase)
    return out.reshape(len(b), d_node)


def encode_boxes(target, reference) -> np.ndarray:
    """Offsets (dx, dy, dw, dh) taking ``reference`` boxes onto ``target`` boxes."""
    t = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    r = np.asarray(reference, dtype=np.float64).reshape(-1, 4)
    rw, rh = r[:, 2] - r[:, 0], r[:, 3] - r[:, 1]
    tw, th = t[:, 2] - t[:, 0], t[:, 3] - t[:, 1]
    wx, wy, ww, wh = BOX_CODER_WEIGHTS
    dx = wx * ((t[:, 0] + t[:, 2]) - (r[:, 0] + r[:, 2])) / 2 / rw
    dy = wy * ((t[:, 1] + t[:, 3]) - (r[:, 1] + r[:, 3])) / 2 / rh
    dw = ww * np.log(tw / rw)
    dh = wh * np.log(th / rh)
    return np.stack([dx, dy, dw, dh], axis=1)


def decode_boxes(offsets, reference) -> np.ndarray:
    """Inverse of :func:`encode_boxes` in corner form: zero offsets return ``reference`` unchanged."""
    d = np.asarray(offsets, dtype=np.float64).reshape(-1, 4)
    r = np.asarray(reference, dtype=np.float64).reshape(-1, 4)
    wx, wy, ww, wh = BOX_CODER_WEIGHTS
    rw, rh = r[:, 2] - r[:, 0], r[:, 3] - r[:, 1]
    sx = np.expm1(np.minimum(d[:, 2] / ww, MAX_LOG_SCALE)) / 2
    sy = np.expm1(np.minimum(d[:, 3] / wh, MAX_LOG_SCALE)) / 2
    cx, cy = d[:, 0] / wx, d[:, 1] / wy
    return np.stack(
        [r[:, 0] + rw * (cx - sx), r[:, 1] + rh * (cy - sy), r[:, 2] + rw * (cx + sx), r[:, 3] + rh * (cy + sy)],
        axis=1,
    )


class RelationModule:
    """Node encoder, L layers of multi-head self-attention, and the two output heads."""

    def __init__(self, store: ParamStore, feat_dim: int, cfg: RelationConfig, prefix: str = "rm"):
        self.cfg = cfg
        d = cfg.d_node
        pooled = cfg.bins * cfg.bins * feat_dim
        self.roi_w = store.uniform(f"{prefix}.roi.w", (pooled, d), fan_in=pooled)
        self.roi_b = store.zeros(f"{prefix}.roi.b", (d,))
        self.node_gamma = store.ones(f"{prefix}.node_ln.gamma", (d,))
        self.node_beta = store.zeros(f"{prefix}.node_ln.beta", (d,))
        self.layers = []
        for li in range(cfg.layers):
            p = f"{prefix}.layer{li}"
            self.layers.append(
                {
                    "q": store.uniform(f"{p}.q.w", (d, d), fan_in=d),
                    "k": store.uniform(f"{p}.k.w", (d, d), fan_in=d),
                    "v": store.uniform(f"{p}.v.w", (d, d), fan_in=d),
                    "o": store.uniform(f"{p}.o.w", (d, d), fan_in=d),
                    "o_b": store.zeros(f"{p}.o.b", (d,)),
                    "gamma": store.ones(f"{p}.ln.gamma", (d,)),
                    "beta": store.zeros(f"{p}.ln.beta", (d,)),
                }
            )
        self.cls_w = store.uniform(f"{prefix}.cls.w", (d, cfg.num_outputs), fan_in=d)
        self.cls_b = store.zeros(f"{prefix}.cls.b", (cfg.num_outputs,))
        self.reg_w = store.zeros(f"{prefix}.reg.w", (d, 4))
        self.reg_b = store.zeros(f"{prefix}.reg.b", (4,))

    # z_j = LayerNorm(f_j + e_pos(b_j))
    def build_nodes(self, fmap: Tensor, stride: float, boxes, scores, page_w: float, page_h: float) -> DocumentGraph:
        b = clamp_boxes(boxes, page_w, page_h)
        if len(b) == 0:
            raise CandidateError("no candidates to build a graph from")
        pooled = roi_align(fmap, b, stride, self.cfg.bins)
        f = nc.rowwise_linear(pooled, self.roi_w, self.roi_b)
        pos = Tensor(pos_embed(b, page_w, page_h, self.cfg.d_node))
        z = nc.layer_norm(nc.add(f, pos), self.node_gamma, self.node_beta)
        return DocumentGraph(b, np.asarray(scores, dtype=np.float64).reshape(-1), f, z)

    def attend(self, z: Tensor) -> tuple[Tensor, list[np.ndarray]]:
        """Residual multi-head self-attention layers, each followed by LayerNorm."""
        n, d = z.shape
        h = self.cfg.heads
        dk = d // h
        maps = []
        for layer in self.layers:
            heads = []
            for name in ("q", "k", "v"):
                proj = nc.rowwise_linear(z, layer[name])
                heads.append(nc.transpose(nc.reshape(proj, (n, h, dk)), (1, 0, 2)))
            out, weights = nc.attention(*heads)
            maps.append(weights)
            merged = nc.reshape(nc.transpose(out, (1, 0, 2)), (n, d))
            mixed = nc.rowwise_linear(merged, layer["o"], layer["o_b"])
            z = nc.layer_norm(nc.add(z, mixed), layer["gamma"], layer["beta"])
        return z, maps

    def __call__(self, graph: DocumentGraph) -> RelationOutput:
        z, maps = self.attend(graph.z)
        logits = nc.rowwise_linear(z, self.cls_w, self.cls_b)
        offsets = nc.rowwise_linear(z, self.reg_w, self.reg_b)
        return RelationOutput(logits, offsets, z, maps)


def refine(graph: DocumentGraph, out: RelationOutput) -> list[RefinedPrediction]:
    """Class probabilities and decoded boxes for every node."""
    probs = nc.softmax(out.logits, axis=-1).data
    boxes = decode_boxes(out.offsets.data, graph.boxes)
    return [RefinedPrediction(probs[j], tuple(float(v) for v in boxes[j]), j) for j in range(graph.n)]


@dataclass
class Detection:
    box: tuple[float, float, float, float]
    class_id: int
    score: float
    index: int = -1


def iou_float(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def nms(boxes, scores, iou_thresh: float) -> list[int]:
    """Greedy NMS; returns kept indices in descending-score order (ties by index)."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    keep: list[int] = []
    for i in order:
        if all(iou_float(boxes[i], boxes[k]) <= iou_thresh for k in keep):
            keep.append(i)
    return keep


def post_process(preds: list[RefinedPrediction], score_thresh: float = 0.05, nms_iou: float = 0.5,
                 background: int | None = None, page_size: tuple[float, float] | None = None) -> list[Detection]:
    """Label each prediction with its best foreground class, threshold, then class-wise NMS."""
    cands: list[Detection] = []
    for p in preds:
        probs = np.array(p.probs, dtype=np.float64)
        if background is not None:
            probs[background] = -np.inf
        c = int(np.argmax(probs))
        score = float(p.probs[c])
        if score < score_thresh:
            continue
        box = p.box
        if page_size is not None:
            w, h = page_size
            box = (min(max(box[0], 0.0), w), min(max(box[1], 0.0), h), min(max(box[2], 0.0), w), min(max(box[3], 0.0), h))
        cands.append(Detection(box, c, score, p.index))
    out: list[Detection] = []
    for c in sorted({d.class_id for d in cands}):
        group = [d for d in cands if d.class_id == c]
        keep = nms([d.box for d in group], [d.score for d in group], nms_iou)
        out.extend(group[k] for k in keep)
    out.sort(key=lambda d: (-d.score, d.index))
    return out


def dump_attention(maps: list[np.ndarray], out_dir, stem: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for li, w in enumerate(maps):
        for hi in range(w.shape[0]):
            p = out / f"{stem}_layer{li}_head{hi}.pgm"
            write_pgm(p, w[hi])
            paths.append(p)
    return paths
