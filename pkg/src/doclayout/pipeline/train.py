"""Training loop, evaluation helpers and the metrics CSV."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numcore as nc
from ..docmodel import Document
from ..numcore import SGD, ContractError, NumericError, checkpoint
from .metrics import COCO_THRESHOLDS, EvalReport, eval_f1, eval_map
from .model import LayoutModel, TrainConfig

METRICS_HEADER = ("epoch", "split", "metric", "class", "value")


class DivergenceError(FloatingPointError):
    """Raised when a loss turns non-finite; carries the last good checkpoint path."""

    def __init__(self, message: str, checkpoint_path: Path | None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


def fmt(v: float) -> str:
    """Shortest repr that round-trips, so CSVs compare byte-for-byte."""
    return repr(float(v))


@dataclass
class TrainResult:
    model: LayoutModel
    rows: list[tuple] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    final: dict[str, EvalReport] = field(default_factory=dict)
    checkpoint_path: Path | None = None

    def csv_text(self) -> str:
        return rows_to_csv(self.rows)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([r[0], r[1], r[2], r[3], fmt(r[4])])
    return buf.getvalue()


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: the base rate divided by 10 every ``lr_decay_every`` epochs (epoch is 0-based)."""
    return cfg.lr * (0.1 ** (epoch // cfg.lr_decay_every))


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def evaluate(model: LayoutModel, docs: list[Document], iou_thresholds=None, threads: int = 1) -> EvalReport:
    """Token F1 in sequence mode, mAP in detection mode (at the config's thresholds unless given).

    Inference is read-only, so it may run threaded.
    """
    if not docs:
        raise ContractError("cannot evaluate an empty corpus")
    preds = _map(model.predict, docs, threads)
    if model.cfg.mode == "sequence":
        flat_p = [c for p in preds for c in p]
        flat_g = [c for d in docs for c in (d.token_labels or ())]
        return eval_f1(flat_p, flat_g, model.catalog)
    thresholds = model.cfg.eval_thresholds if iou_thresholds is None else iou_thresholds
    return eval_map(preds, [list(d.regions) for d in docs], thresholds, catalog=model.catalog)


def save_model(model: LayoutModel, path, extra: dict | None = None) -> None:
    meta = {"config": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    checkpoint.save(path, model.store.state(), meta)


def load_model(path) -> LayoutModel:
    state, meta = checkpoint.load(path)
    if not meta or "config" not in meta:
        raise checkpoint.CheckpointError(f"{path}: checkpoint carries no config")
    model = LayoutModel(TrainConfig.from_dict(meta["config"]))
    try:
        model.store.load_state(state)
    except (KeyError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"{path}: {exc}") from exc
    return model


def _eval_rows(epoch: int, split: str, rep: EvalReport) -> list[tuple]:
    return [(epoch, split, m, c, v) for m, c, v in rep.rows()]


def train_loop(docs: list[Document], cfg: TrainConfig, out_dir=None, val_docs: list[Document] | None = None,
               threads: int = 1, log=None) -> TrainResult:
    """Minibatch SGD over ``docs``.

    Documents are visited in an order drawn from the run seed each epoch, and
    gradients are accumulated serially in that order, so the result depends
    only on the config and the corpus. Evaluation rows are written every
    ``eval_every`` epochs and after the last one. A non-finite loss aborts the
    run after saving the parameters from before the offending step.
    """
    if not docs:
        raise ContractError("training corpus is empty")
    model = LayoutModel(cfg)
    params = list(model.store)
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    order_rng = np.random.default_rng([cfg.seed, 1])
    cand_rng = np.random.default_rng([cfg.seed, 2])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model)
    ckpt = out / "model.ckpt" if out is not None else None

    for epoch in range(cfg.epochs):
        opt.lr = lr_at(cfg, epoch)
        order = order_rng.permutation(len(docs))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [docs[i] for i in order[start:start + cfg.batch_size]]
            snapshot = {n: p.data for n, p in zip(model.store.names(), params)}
            opt.zero_grad()
            for doc in batch:
                try:
                    with np.errstate(over="ignore", invalid="ignore"):
                        fwd = model.forward(doc, training=True, rng=cand_rng)
                    loss = fwd.loss.total
                    value = float(loss.data)
                except NumericError:
                    value = float("nan")
                if not np.isfinite(value):
                    model.store.load_state(snapshot)
                    if ckpt is not None:
                        save_model(model, ckpt, {"epoch": epoch, "diverged": True})
                    raise DivergenceError(f"non-finite loss at epoch {epoch + 1} on document {doc.id}", ckpt)
                nc.mul(loss, 1.0 / len(batch)).backward()
                total += value
            opt.step()
        mean_loss = total / len(docs)
        result.losses.append(mean_loss)
        result.rows.append((epoch + 1, "train", "loss", "all", mean_loss))
        result.rows.append((epoch + 1, "train", "lr", "all", opt.lr))
        last = epoch + 1 == cfg.epochs
        if last or (epoch + 1) % cfg.eval_every == 0:
            rep = evaluate(model, docs, threads=threads)
            result.rows.extend(_eval_rows(epoch + 1, "train", rep))
            result.final["train"] = rep
            if val_docs:
                vrep = evaluate(model, val_docs, threads=threads)
                result.rows.extend(_eval_rows(epoch + 1, "val", vrep))
                result.final["val"] = vrep
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {mean_loss:.6f} lr {opt.lr:g}")

    if cfg.epochs == 0:
        result.final["train"] = evaluate(model, docs, threads=threads)
        result.rows.extend(_eval_rows(0, "train", result.final["train"]))
    if out is not None:
        save_model(model, ckpt, {"epoch": cfg.epochs})
        (out / "metrics.csv").write_text(result.csv_text())
        result.checkpoint_path = ckpt
    return result


def write_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")


__all__ = [
    "COCO_THRESHOLDS",
    "DivergenceError",
    "METRICS_HEADER",
    "TrainResult",
    "evaluate",
    "load_model",
    "lr_at",
    "rows_to_csv",
    "save_model",
    "train_loop",
    "write_config",
]
