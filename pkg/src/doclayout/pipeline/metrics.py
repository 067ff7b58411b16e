"""Token-level F1 and detection mAP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..docmodel import ClassCatalog
from ..numcore import ContractError
from ..relmod import Detection
from .candidates import match_candidates

COCO_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


def iou(a, b) -> float:
    """Intersection over union of two (x0, y0, x1, y1) boxes."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


@dataclass
class EvalReport:
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    summary: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str, float]]:
        """(metric, class, value) triples, summary first."""
        out = [(m, "all", v) for m, v in self.summary.items()]
        for cls, metrics in self.per_class.items():
            out.extend((m, cls, v) for m, v in metrics.items())
        return out


def eval_f1(pred, gold, catalog: ClassCatalog) -> EvalReport:
    """Per-class precision/recall/F1 over tokens; macro average over classes present in gold."""
    pred = np.asarray(list(pred), dtype=np.int64)
    gold = np.asarray(list(gold), dtype=np.int64)
    if pred.shape != gold.shape:
        raise ContractError(f"prediction/gold length mismatch: {pred.size} vs {gold.size}")
    rep = EvalReport()
    f1s = []
    for c, name in enumerate(catalog.names):
        tp = int(np.sum((pred == c) & (gold == c)))
        fp = int(np.sum((pred == c) & (gold != c)))
        fn = int(np.sum((pred != c) & (gold == c)))
        if tp + fn == 0:
            continue
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn)
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        rep.per_class[name] = {"precision": p, "recall": r, "f1": f1}
        rep.counts[name] = tp + fn
        f1s.append(f1)
    rep.summary["macro_f1"] = float(np.mean(f1s)) if f1s else 0.0
    rep.summary["accuracy"] = float(np.mean(pred == gold)) if gold.size else 0.0
    return rep


def count_duplicates(boxes, gt_boxes, thresh: float = 0.5) -> int:
    """Boxes beyond the first that land on the same truth (class-agnostic best-IoU match)."""
    match = match_candidates(boxes, gt_boxes, thresh)
    hits = np.bincount(match[match >= 0], minlength=len(gt_boxes))
    return int(np.maximum(hits - 1, 0).sum())


def average_precision(tp: np.ndarray, npos: int) -> float:
    """All-point interpolated AP from a score-ordered TP indicator vector."""
    if npos == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    rec = ctp / npos
    prec = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).tiny)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def match_greedy(dets, gts, thresh: float) -> list[bool]:
    """Score-ordered matching; each detection takes the best still-unmatched truth at IoU >= thresh.

    ``dets``: list of (score, doc, order, box); ``gts``: doc -> list of boxes.
    Returns TP flags in the sorted detection order.
    """
    used = {doc: [False] * len(boxes) for doc, boxes in gts.items()}
    flags = []
    for _, doc, _, box in sorted(dets, key=lambda d: (-d[0], d[1], d[2])):
        best, best_iou = -1, thresh
        for gi, g in enumerate(gts.get(doc, ())):
            if used[doc][gi]:
                continue
            v = iou(box, g)
            if v >= best_iou and (best < 0 or v > best_iou):
                best, best_iou = gi, v
        if best >= 0:
            used[doc][best] = True
        flags.append(best >= 0)
    return flags


def eval_map(detections, ground_truth, iou_thresholds=(0.5,), catalog: ClassCatalog | None = None,
             num_classes: int | None = None) -> EvalReport:
    """Mean AP over classes that have ground truth, then over IoU thresholds.

    ``detections[d]`` is a list of :class:`Detection` (or (box, class, score)
    tuples) for document ``d``; ``ground_truth[d]`` a list of (box, class)
    pairs or Region objects.
    """
    if catalog is not None:
        num_classes = catalog.count
    dets_by_class: dict[int, list] = {}
    gts_by_class: dict[int, dict[int, list]] = {}
    for d, dl in enumerate(detections):
        for order, det in enumerate(dl):
            box, cls, score = (det.box, det.class_id, det.score) if isinstance(det, Detection) else det
            dets_by_class.setdefault(int(cls), []).append((float(score), d, order, tuple(box)))
    for d, gl in enumerate(ground_truth):
        for g in gl:
            box, cls = (g.box, g.class_id) if hasattr(g, "class_id") else g
            gts_by_class.setdefault(int(cls), {}).setdefault(d, []).append(tuple(box))
    classes = sorted(gts_by_class)
    if num_classes is None:
        num_classes = (max(classes) + 1) if classes else 0
    rep = EvalReport()
    per_thresh = []
    ap_table = {c: [] for c in classes}
    for t in iou_thresholds:
        aps = []
        for c in classes:
            gts = gts_by_class[c]
            npos = sum(len(v) for v in gts.values())
            flags = match_greedy(dets_by_class.get(c, []), gts, t)
            ap = average_precision(np.array(flags, dtype=np.float64), npos)
            ap_table[c].append(ap)
            aps.append(ap)
        per_thresh.append(float(np.mean(aps)) if aps else 0.0)
    for c in classes:
        name = catalog.name(c) if catalog is not None else str(c)
        rep.per_class[name] = {"ap": float(np.mean(ap_table[c]))}
        rep.counts[name] = sum(len(v) for v in gts_by_class[c].values())
    rep.summary["map"] = float(np.mean(per_thresh)) if per_thresh else 0.0
    for t, v in zip(iou_thresholds, per_thresh):
        rep.summary[f"map@{t:.2f}"] = v
    return rep
