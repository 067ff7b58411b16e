"""Candidate generation: a dense one-scale head and a perturbed-truth source."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numcore as nc
from ..numcore import ParamStore, Tensor
from ..relmod import clamp_boxes, decode_boxes, iou_float, nms


@dataclass
class HeadOutput:
    objectness: Tensor  # [M] logits
    offsets: Tensor  # [M, 4]
    anchors: np.ndarray  # [M, 4]
    grid: tuple[int, int]  # (rows, cols) of the cell lattice


def anchor_squares(rows: int, cols: int, stride: float, size: float) -> np.ndarray:
    """One square per cell, centred on the cell centre, in row-major cell order."""
    cy, cx = np.meshgrid((np.arange(rows) + 0.5) * stride, (np.arange(cols) + 0.5) * stride, indexing="ij")
    half = size / 2.0
    return np.stack([cx - half, cy - half, cx + half, cy + half], axis=-1).reshape(-1, 4)


class CandidateHead:
    """conv3x3 -> relu -> conv1x1 predicting an objectness logit and 4 box offsets per cell.

    The output layer starts at zero, so an untrained head scores every cell
    0.5 and returns the anchor squares unchanged.
    """

    def __init__(self, store: ParamStore, dim: int, stride: float = 8.0, anchor_size: float = 16.0,
                 prefix: str = "head"):
        self.stride = stride
        self.anchor_size = anchor_size
        self.hidden_w = store.uniform(f"{prefix}.hidden.w", (3, 3, dim, dim), fan_in=9 * dim)
        self.hidden_b = store.zeros(f"{prefix}.hidden.b", (dim,))
        self.out_w = store.zeros(f"{prefix}.out.w", (1, 1, dim, 5))
        self.out_b = store.zeros(f"{prefix}.out.b", (5,))

    def __call__(self, fmap: Tensor) -> HeadOutput:
        rows, cols = fmap.shape[0], fmap.shape[1]
        hid = nc.relu(nc.conv2d(fmap, self.hidden_w, self.hidden_b, stride=1, pad=1))
        out = nc.reshape(nc.conv2d(hid, self.out_w, self.out_b), (rows * cols, 5))
        obj = nc.reshape(out[:, 0:1], (rows * cols,))
        return HeadOutput(obj, out[:, 1:5], anchor_squares(rows, cols, self.stride, self.anchor_size), (rows, cols))


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def propose(out: HeadOutput, page_w: float, page_h: float, top_k: int = 16, nms_iou: float = 0.7,
            min_size: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Decode, clamp to the page, drop tiny boxes, class-agnostic NMS, keep the top-K by objectness."""
    boxes = clamp_boxes(decode_boxes(out.offsets.data, out.anchors), page_w, page_h)
    scores = sigmoid_np(out.objectness.data)
    ok = ((boxes[:, 2] - boxes[:, 0]) >= min_size) & ((boxes[:, 3] - boxes[:, 1]) >= min_size)
    idx = np.nonzero(ok)[0]
    if nms_iou < 1.0:
        keep = nms([boxes[i] for i in idx], [scores[i] for i in idx], nms_iou)
        idx = idx[keep]
    else:
        idx = np.array(sorted(idx, key=lambda i: (-scores[i], i)), dtype=np.int64)
    idx = idx[:top_k]
    return boxes[idx], scores[idx]


def assign_anchors(anchors: np.ndarray, gt_boxes, stride: float, grid: tuple[int, int]) -> np.ndarray:
    """Ground-truth index per anchor (-1 = background).

    A cell is positive for a truth box when its centre lies inside the box
    (smallest box wins); the cell holding each box's centre is always
    positive for that box so thin regions are never left without a match.
    """
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    m = len(anchors)
    assign = np.full(m, -1, dtype=np.int64)
    if len(gt) == 0:
        return assign
    cx = (anchors[:, 0] + anchors[:, 2]) / 2
    cy = (anchors[:, 1] + anchors[:, 3]) / 2
    area = (gt[:, 2] - gt[:, 0]) * (gt[:, 3] - gt[:, 1])
    inside = (cx[:, None] >= gt[None, :, 0]) & (cx[:, None] < gt[None, :, 2]) & (cy[:, None] >= gt[None, :, 1]) & (
        cy[:, None] < gt[None, :, 3]
    )
    masked = np.where(inside, area[None, :], np.inf)
    has = inside.any(axis=1)
    assign[has] = np.argmin(masked[has], axis=1)
    rows, cols = grid
    for gi, (x0, y0, x1, y1) in enumerate(gt):
        col = min(int(((x0 + x1) / 2) // stride), cols - 1)
        row = min(int(((y0 + y1) / 2) // stride), rows - 1)
        assign[row * cols + col] = gi
    return assign


def match_candidates(boxes, gt_boxes, thresh: float = 0.5, unique: bool = False) -> np.ndarray:
    """Truth index per candidate: its best-IoU truth if IoU >= thresh, else -1.

    With ``unique`` each truth keeps only its single best candidate; other
    candidates that matched it become background.
    """
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    out = np.full(len(b), -1, dtype=np.int64)
    if len(gt) == 0 or len(b) == 0:
        return out
    ious = np.array([[iou_float(x, g) for g in gt] for x in b])
    best = ious.argmax(axis=1)
    ok = ious[np.arange(len(b)), best] >= thresh
    out[ok] = best[ok]
    if unique:
        for gi in range(len(gt)):
            members = np.nonzero(out == gi)[0]
            if len(members) > 1:
                keep = members[np.argmax(ious[members, gi])]
                out[members[members != keep]] = -1
    return out


def perturbed_candidates(gt_boxes, page_w: float, page_h: float, rng: np.random.Generator, jitter: float = 0.1,
                         dup_prob: float = 0.5, dup_jitter: float = 0.2, n_false: int = 2) -> np.ndarray:
    """Jittered copies of the truth boxes, occasional looser duplicates, and a few random boxes.

    The result is shuffled so list position carries no information.
    """
    out = []

    def jittered(box, amount):
        x0, y0, x1, y1 = box
        w, h = x1 - x0, y1 - y0
        d = rng.uniform(-amount, amount, size=4) * np.array([w, h, w, h])
        nb = np.array([x0, y0, x1, y1], dtype=np.float64) + d
        nb = clamp_boxes(nb, page_w, page_h)[0]
        if nb[2] - nb[0] < 1 or nb[3] - nb[1] < 1:
            nb = np.array(box, dtype=np.float64)
        return nb

    for box in gt_boxes:
        out.append(jittered(box, jitter))
        if rng.random() < dup_prob:
            out.append(jittered(box, dup_jitter))
    for _ in range(n_false):
        w = rng.uniform(8, page_w * 0.6)
        h = rng.uniform(4, page_h * 0.25)
        x0 = rng.uniform(0, page_w - w)
        y0 = rng.uniform(0, page_h - h)
        out.append(np.array([x0, y0, x0 + w, y0 + h]))
    arr = np.array(out, dtype=np.float64).reshape(-1, 4)
    return arr[rng.permutation(len(arr))]
