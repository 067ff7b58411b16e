"""Variant sweeps over semantic granularity, fusion type and the relation module."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from ..docmodel import Document
from .model import TrainConfig
from .train import fmt, train_loop

VARIANTS: dict[str, dict] = {
    "visionOnly": {"fusion": "vision"},
    "+char": {"use_char": True, "use_sent": False},
    "+sentence": {"use_char": False, "use_sent": True},
    "+both": {"use_char": True, "use_sent": True},
    "concatFusion": {"fusion": "concat"},
    "adaptiveFusion": {"fusion": "adaptive"},
    "withRM": {},
    "withoutRM": {"rm_layers": 0},
}

ABLATION_HEADER = ("variant", "metric", "value", "seed")


@dataclass
class AblationRow:
    variant: str
    metric: str
    value: float
    seed: int


def variant_config(base: TrainConfig, name: str, seed: int) -> TrainConfig:
    """``base`` with the variant's overrides and the given seed.

    Compound names joined by ``/`` (``"+char/concatFusion"``) apply each part in order.
    """
    overrides: dict = {"seed": seed}
    for part in name.split("/"):
        if part not in VARIANTS:
            raise KeyError(f"unknown variant {part!r}; choose from {sorted(VARIANTS)}")
        overrides.update(VARIANTS[part])
    return base.replace(**overrides)


def run_ablation(train_docs: list[Document], val_docs: list[Document], base: TrainConfig, variants, seeds,
                 threads: int = 1, log=None) -> list[AblationRow]:
    """Train every variant under every seed with identical budgets; report held-out summary metrics."""
    rows = []
    for seed in seeds:
        for name in variants:
            cfg = variant_config(base, name, seed)
            res = train_loop(train_docs, cfg, val_docs=val_docs, threads=threads)
            rep = res.final["val"]
            for metric, value in rep.summary.items():
                rows.append(AblationRow(name, metric, value, seed))
            rows.append(AblationRow(name, "params", float(res.model.param_count()), seed))
            if log is not None:
                log(f"seed {seed} {name}: " + ", ".join(f"{k}={v:.4f}" for k, v in rep.summary.items()))
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_HEADER)
    for r in rows:
        w.writerow([r.variant, r.metric, fmt(r.value), r.seed])
    return buf.getvalue()


def metric_table(rows: list[AblationRow], metric: str) -> dict[int, dict[str, float]]:
    """seed -> variant -> value for one metric."""
    out: dict[int, dict[str, float]] = {}
    for r in rows:
        if r.metric == metric:
            out.setdefault(r.seed, {})[r.variant] = r.value
    return out
