"""Model assembly: grids, fusion backbone, candidate source and relation module."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .. import numcore as nc
from ..docmodel import DEFAULT_CATALOG, ClassCatalog, Document
from ..fusenet import FUSIONS, BackboneConfig, FeaturePyramid, FuseNet, forward_fuse
from ..gridenc import EmbeddingTables
from ..numcore import ContractError, ParamStore, Tensor
from ..relmod import (
    Detection,
    DocumentGraph,
    RelationConfig,
    RelationModule,
    RelationOutput,
    post_process,
    refine,
)
from .candidates import CandidateHead, HeadOutput, perturbed_candidates, propose
from .losses import LossReport, combine, head_loss, relation_loss, sequence_loss

MODES = ("sequence", "detection")
CANDIDATE_SOURCES = ("head", "perturbed")

# Pyramid level used by each consumer: P2 (stride 4) for region pooling, P3 (stride 8) for the head.
ROI_LEVEL, ROI_STRIDE = 0, 4.0
HEAD_LEVEL, HEAD_STRIDE = 1, 8.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a run: optimisation, architecture and candidate source."""

    mode: str = "sequence"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 10
    lr_decay_every: int = 10
    lam: float = 1.0
    batch_size: int = 2
    seed: int = 0
    eval_every: int = 1
    # semantic grids
    sem_dim: int = 8
    use_char: bool = True
    use_sent: bool = True
    # backbone
    channels: tuple[int, ...] = (16, 32, 32, 32)
    blocks_per_stage: int = 1
    fpn_dim: int = 32
    fusion: str = "adaptive"
    # relation module
    d_node: int = 64
    heads: int = 4
    rm_layers: int = 2
    # detection
    candidates: str = "head"
    top_k: int = 16
    anchor_size: float = 16.0
    unique_match: bool = False
    score_thresh: float = 0.05
    nms_iou: float = 0.5
    jitter: float = 0.1
    dup_prob: float = 0.5
    n_false: int = 2
    eval_thresholds: tuple[float, ...] = (0.5,)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.candidates not in CANDIDATE_SOURCES:
            raise ConfigError(f"candidates must be one of {CANDIDATE_SOURCES}, got {self.candidates!r}")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("lr, momentum and weight_decay must be non-negative")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.lr_decay_every < 1 or self.eval_every < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, lr_decay_every >= 1 and eval_every >= 1 required")
        if not self.eval_thresholds or any(not 0 < t <= 1 for t in self.eval_thresholds):
            raise ConfigError("eval_thresholds must be non-empty and lie in (0, 1]")
        if self.top_k < 1:
            raise ConfigError("top_k must be positive")
        try:
            BackboneConfig(tuple(self.channels), self.blocks_per_stage, self.fpn_dim)
            RelationConfig(self.d_node, self.heads, self.rm_layers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        vals = dict(raw)
        for key, conv in (("channels", int), ("eval_thresholds", float)):
            if key in vals:
                vals[key] = tuple(conv(c) for c in vals[key])
        try:
            return cls(**vals)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        d["eval_thresholds"] = list(self.eval_thresholds)
        return d

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class Forward:
    """Everything one document's forward pass produced."""

    pyramid: FeaturePyramid
    graph: DocumentGraph
    rm: RelationOutput
    head: HeadOutput | None = None
    loss: LossReport | None = None
    extras: dict = field(default_factory=dict)


class LayoutModel:
    """The full network for either task mode.

    Sequence mode treats every word token as a graph node and classifies it
    among the catalog classes. Detection mode builds nodes from candidate
    boxes and classifies them among the catalog classes plus a trailing
    background class.
    """

    def __init__(self, cfg: TrainConfig, catalog: ClassCatalog = DEFAULT_CATALOG):
        self.cfg = cfg
        self.catalog = catalog
        self.store = ParamStore(cfg.seed)
        self.tables = EmbeddingTables.create(self.store, dim=cfg.sem_dim)
        bcfg = BackboneConfig(tuple(cfg.channels), cfg.blocks_per_stage, cfg.fpn_dim)
        self.net = FuseNet(self.store, cfg.sem_dim, bcfg, fusion=cfg.fusion)
        self.head = None
        if cfg.mode == "detection" and cfg.candidates == "head":
            self.head = CandidateHead(self.store, cfg.fpn_dim, stride=HEAD_STRIDE, anchor_size=cfg.anchor_size)
        outputs = catalog.count + (1 if cfg.mode == "detection" else 0)
        self.rm = RelationModule(self.store, cfg.fpn_dim, RelationConfig(cfg.d_node, cfg.heads, cfg.rm_layers,
                                                                         num_outputs=outputs))

    @property
    def background(self) -> int:
        return self.catalog.count

    def pyramid(self, doc: Document, force_am: float | None = None) -> FeaturePyramid:
        return forward_fuse(doc, self.tables, self.net, self.cfg.use_char, self.cfg.use_sent, force_am)

    # --- sequence labelling -------------------------------------------------

    def forward_sequence(self, doc: Document, with_loss: bool = True) -> Forward:
        tokens = doc.tokens()
        if not tokens:
            raise ContractError(f"document {doc.id} has no tokens")
        pyr = self.pyramid(doc)
        boxes = np.array([t.box for t in tokens], dtype=np.float64)
        graph = self.rm.build_nodes(pyr.p[ROI_LEVEL], ROI_STRIDE, boxes, np.ones(len(boxes)), doc.width, doc.height)
        out = self.rm(graph)
        fwd = Forward(pyr, graph, out)
        if with_loss:
            if doc.token_labels is None:
                raise ContractError(f"document {doc.id} has no token labels")
            # cross entropy on logits equals the mean negative log of the softmax probabilities
            total = nc.cross_entropy(out.logits, np.asarray(doc.token_labels, dtype=np.int64))
            fwd.loss = LossReport(total=total, rm_cls=float(total.data), l_rm=float(total.data))
        return fwd

    def token_probs(self, fwd: Forward) -> np.ndarray:
        return nc.softmax(fwd.rm.logits, axis=-1).data

    def probability_loss(self, fwd: Forward, labels) -> Tensor:
        """Sequence loss evaluated literally on the softmax probabilities."""
        return sequence_loss(nc.softmax(fwd.rm.logits, axis=-1), labels)

    # --- detection ----------------------------------------------------------

    def candidate_boxes(self, doc: Document, fwd_head: HeadOutput | None, training: bool,
                        rng: np.random.Generator | None) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        gt = np.array([r.box for r in doc.regions], dtype=np.float64).reshape(-1, 4)
        if cfg.candidates == "perturbed":
            if rng is None:
                rng = np.random.default_rng([doc.id, 7])
            boxes = perturbed_candidates(gt, doc.width, doc.height, rng, jitter=cfg.jitter, dup_prob=cfg.dup_prob,
                                         n_false=cfg.n_false)
            return boxes, np.ones(len(boxes))
        boxes, scores = propose(fwd_head, doc.width, doc.height, top_k=cfg.top_k)
        if training and len(gt):
            # truth boxes join the proposals so the relation module always sees positives
            boxes = np.concatenate([boxes, gt])
            scores = np.concatenate([scores, np.ones(len(gt))])
        return boxes, scores

    def forward_detection(self, doc: Document, training: bool = True, with_loss: bool = True,
                          rng: np.random.Generator | None = None, force_am: float | None = None,
                          frozen: tuple[np.ndarray, np.ndarray] | None = None) -> Forward:
        """Full detection pass.

        Candidate boxes are constants of the graph (no gradient flows through
        box selection); ``frozen`` supplies them directly instead of
        generating them, which keeps finite-difference probes on one branch.
        """
        cfg = self.cfg
        pyr = self.pyramid(doc, force_am)
        head = self.head(pyr.p[HEAD_LEVEL]) if self.head is not None else None
        if frozen is not None:
            boxes, scores = frozen
        else:
            boxes, scores = self.candidate_boxes(doc, head, training, rng)
        graph = self.rm.build_nodes(pyr.p[ROI_LEVEL], ROI_STRIDE, boxes, scores, doc.width, doc.height)
        out = self.rm(graph)
        fwd = Forward(pyr, graph, out, head)
        if with_loss:
            if not doc.regions:
                raise ContractError(f"document {doc.id} has no regions")
            gt_boxes = [r.box for r in doc.regions]
            gt_cls = [r.class_id for r in doc.regions]
            if head is not None:
                det_cls, det_reg = head_loss(head, gt_boxes, HEAD_STRIDE)
            else:
                det_cls, det_reg = Tensor(0.0), Tensor(0.0)
            rm_cls, rm_reg = relation_loss(out, graph.boxes, gt_boxes, gt_cls, self.background,
                                           unique=cfg.unique_match)
            fwd.loss = combine(det_cls, det_reg, rm_cls, rm_reg, cfg.lam)
        return fwd

    def detections(self, doc: Document, fwd: Forward) -> list[Detection]:
        preds = refine(fwd.graph, fwd.rm)
        return post_process(preds, self.cfg.score_thresh, self.cfg.nms_iou, background=self.background,
                            page_size=(doc.width, doc.height))

    # --- shared -------------------------------------------------------------

    def forward(self, doc: Document, training: bool = True, rng: np.random.Generator | None = None) -> Forward:
        if self.cfg.mode == "sequence":
            return self.forward_sequence(doc)
        return self.forward_detection(doc, training=training, rng=rng)

    def predict(self, doc: Document):
        """Token class ids (sequence mode) or a list of detections (detection mode)."""
        with nc.no_grad():
            if self.cfg.mode == "sequence":
                fwd = self.forward_sequence(doc, with_loss=False)
                return [int(c) for c in np.argmax(fwd.rm.logits.data, axis=-1)]
            fwd = self.forward_detection(doc, training=False, with_loss=False)
            return self.detections(doc, fwd)

    def param_count(self, prefix: str = "") -> int:
        return self.store.count(prefix)
