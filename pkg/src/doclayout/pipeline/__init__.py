"""Task assembly: candidates, losses, training, metrics and ablations."""

from .ablation import VARIANTS, AblationRow, ablation_csv, metric_table, run_ablation, variant_config
from .candidates import (
    CandidateHead,
    HeadOutput,
    anchor_squares,
    assign_anchors,
    match_candidates,
    perturbed_candidates,
    propose,
)
from .losses import LossReport, combine, detection_loss, head_loss, relation_loss, sequence_loss
from .metrics import (
    COCO_THRESHOLDS,
    EvalReport,
    average_precision,
    count_duplicates,
    eval_f1,
    eval_map,
    iou,
    match_greedy,
)
from .model import ConfigError, Forward, LayoutModel, TrainConfig
from .train import DivergenceError, TrainResult, evaluate, load_model, lr_at, rows_to_csv, save_model, train_loop

__all__ = [
    "VARIANTS",
    "AblationRow",
    "ablation_csv",
    "metric_table",
    "run_ablation",
    "variant_config",
    "COCO_THRESHOLDS",
    "CandidateHead",
    "ConfigError",
    "DivergenceError",
    "EvalReport",
    "Forward",
    "HeadOutput",
    "LayoutModel",
    "LossReport",
    "TrainConfig",
    "TrainResult",
    "anchor_squares",
    "assign_anchors",
    "average_precision",
    "combine",
    "count_duplicates",
    "detection_loss",
    "eval_f1",
    "eval_map",
    "evaluate",
    "head_loss",
    "iou",
    "load_model",
    "lr_at",
    "match_candidates",
    "match_greedy",
    "perturbed_candidates",
    "propose",
    "relation_loss",
    "rows_to_csv",
    "save_model",
    "sequence_loss",
    "train_loop",
]
