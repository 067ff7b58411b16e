"""Training objectives for both task modes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numcore as nc
from ..numcore import ContractError, Tensor
from ..relmod import RelationOutput, encode_boxes
from .candidates import HeadOutput, assign_anchors, match_candidates


@dataclass
class LossReport:
    total: Tensor
    l_det: float = 0.0
    l_rm: float = 0.0
    det_cls: float = 0.0
    det_reg: float = 0.0
    rm_cls: float = 0.0
    rm_reg: float = 0.0

    @property
    def value(self) -> float:
        return float(self.total.data)


def sequence_loss(probs, labels) -> Tensor:
    """Mean negative log-probability of each token's gold label; ``probs`` is [T, C]."""
    probs = nc.as_tensor(probs)
    y = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ContractError("sequence_loss needs at least one token")
    if y.shape != (probs.shape[0],):
        raise ContractError(f"{y.size} labels for {probs.shape[0]} tokens")
    picked = nc.index(probs, (np.arange(len(y)), y))
    return nc.mul(nc.mean(nc.log(picked)), -1.0)


def _zero() -> Tensor:
    return Tensor(0.0)


def head_loss(head: HeadOutput, gt_boxes, stride: float) -> tuple[Tensor, Tensor]:
    """Objectness cross-entropy over all cells plus smooth-L1 on positive cells' offsets."""
    assign = assign_anchors(head.anchors, gt_boxes, stride, head.grid)
    labels = (assign >= 0).astype(np.int64)
    m = len(labels)
    two_class = nc.concat([Tensor(np.zeros((m, 1))), nc.reshape(head.objectness, (m, 1))], axis=1)
    cls = nc.cross_entropy(two_class, labels)
    pos = np.nonzero(assign >= 0)[0]
    if len(pos) == 0:
        return cls, _zero()
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    targets = encode_boxes(gt[assign[pos]], head.anchors[pos])
    reg = nc.smooth_l1(head.offsets[pos], Tensor(targets))
    return cls, reg


def relation_loss(out: RelationOutput, cand_boxes, gt_boxes, gt_classes, background: int,
                  iou_thresh: float = 0.5, unique: bool = False) -> tuple[Tensor, Tensor]:
    """Classification against matched truth (background when unmatched) plus smooth-L1 on matched offsets."""
    match = match_candidates(cand_boxes, gt_boxes, iou_thresh, unique=unique)
    classes = np.asarray(gt_classes, dtype=np.int64)
    targets = np.where(match >= 0, classes[np.maximum(match, 0)] if len(classes) else background, background)
    cls = nc.cross_entropy(out.logits, targets)
    pos = np.nonzero(match >= 0)[0]
    if len(pos) == 0:
        return cls, _zero()
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cb = np.asarray(cand_boxes, dtype=np.float64).reshape(-1, 4)
    reg_t = encode_boxes(gt[match[pos]], cb[pos])
    reg = nc.smooth_l1(out.offsets[pos], Tensor(reg_t))
    return cls, reg


def combine(det_cls: Tensor, det_reg: Tensor, rm_cls: Tensor, rm_reg: Tensor, lam: float) -> LossReport:
    """total = (det_cls + det_reg) + lam * (rm_cls + rm_reg)."""
    l_det = nc.add(det_cls, det_reg)
    l_rm = nc.add(rm_cls, rm_reg)
    total = nc.add(l_det, nc.mul(l_rm, lam))
    return LossReport(
        total=total,
        l_det=float(l_det.data),
        l_rm=float(l_rm.data),
        det_cls=float(det_cls.data),
        det_reg=float(det_reg.data),
        rm_cls=float(rm_cls.data),
        rm_reg=float(rm_reg.data),
    )


def detection_loss(head: HeadOutput, rm_out: RelationOutput, cand_boxes, gt_regions, lam: float,
                   background: int, stride: float = 8.0, unique: bool = False) -> LossReport:
    if not gt_regions:
        raise ContractError("detection loss needs at least one ground-truth region")
    gt_boxes = [r.box for r in gt_regions]
    gt_classes = [r.class_id for r in gt_regions]
    det_cls, det_reg = head_loss(head, gt_boxes, stride)
    rm_cls, rm_reg = relation_loss(rm_out, cand_boxes, gt_boxes, gt_classes, background, unique=unique)
    return combine(det_cls, det_reg, rm_cls, rm_reg, lam)
