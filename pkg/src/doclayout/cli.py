"""Command-line entry point: ``doclayout {synth,train,eval,gradcheck,infer}``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .docmodel import DEFAULT_CATALOG, DocumentError, GenerationError, SynthSpec, load_corpus, save_corpus, synthesize
from .docmodel.corpus import CorpusError
from .numcore import checkpoint
from .pipeline import COCO_THRESHOLDS, ConfigError, DivergenceError, TrainConfig, evaluate, load_model, train_loop
from .pipeline.metrics import eval_map
from .pipeline.train import fmt

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        if flag < 1:
            raise UsageError("--threads must be >= 1")
        return flag
    env = os.environ.get("VSR_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise UsageError(f"VSR_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise UsageError("VSR_THREADS must be >= 1")
        return n
    return 1


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def _corpus(path: str):
    if not Path(path).is_file():
        raise UsageError(f"corpus not found: {path}")
    return load_corpus(path)


def _thresholds(spec: str) -> tuple[float, ...]:
    if spec == "coco":
        return COCO_THRESHOLDS
    try:
        vals = tuple(float(v) for v in spec.split(","))
    except ValueError as exc:
        raise UsageError(f"--iou expects 'coco' or comma-separated floats, got {spec!r}") from exc
    if not vals or any(not 0 < v <= 1 for v in vals):
        raise UsageError("--iou thresholds must lie in (0, 1]")
    return vals


# --- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    raw = _read_json(args.spec)
    known = {f.name for f in dataclasses.fields(SynthSpec)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise UsageError(f"unknown synth spec keys: {', '.join(unknown)}")
    if "block_weights" in raw:
        raw["block_weights"] = tuple((str(k), float(w)) for k, w in raw["block_weights"])
    spec = SynthSpec(**raw)
    docs = synthesize(args.seed, args.count, spec)
    save_corpus(docs, args.out)
    print(f"wrote {len(docs)} documents to {args.out}")
    return EXIT_OK


CLI_OVERRIDES = ("mode", "epochs", "lr", "seed", "fusion", "batch_size")


def build_config(args) -> TrainConfig:
    raw = _read_json(args.config)
    for key in CLI_OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    return TrainConfig.from_dict(raw)


def cmd_train(args) -> int:
    cfg = build_config(args)
    docs = _corpus(args.corpus)
    val = _corpus(args.val) if args.val else None
    threads = resolve_threads(args.threads)
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    try:
        res = train_loop(docs, cfg, out_dir=args.out, val_docs=val, threads=threads, log=log)
    except DivergenceError as exc:
        _err(f"{exc}; last good parameters in {exc.checkpoint_path}")
        return EXIT_FAIL
    final = res.final.get("val") or res.final["train"]
    summary = " ".join(f"{k}={fmt(v)}" for k, v in final.summary.items())
    print(f"final loss={fmt(res.losses[-1]) if res.losses else 'nan'} {summary}")
    return EXIT_OK


def _load_detections(path: str, n_docs: int):
    dets: list[list] = [[] for _ in range(n_docs)]
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            d = int(rec["doc"])
            dets[d].extend((tuple(x["box"]), int(x["class"]), float(x["score"])) for x in rec["detections"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
            raise UsageError(f"{path}:{lineno}: bad detection record ({exc})") from exc
    return dets


def _write_report_csv(path, rep) -> None:
    lines = ["metric,class,value"] + [f"{m},{c},{fmt(v)}" for m, c, v in rep.rows()]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    docs = _corpus(args.corpus)
    if (args.checkpoint is None) == (args.detections is None):
        raise UsageError("give exactly one of --checkpoint or --detections")
    if args.detections is not None:
        if args.mode == "sequence":
            raise UsageError("--detections requires --mode detection")
        dets = _load_detections(args.detections, len(docs))
        rep = eval_map(dets, [list(d.regions) for d in docs], _thresholds(args.iou), catalog=DEFAULT_CATALOG)
    else:
        model = _load_checkpoint(args.checkpoint)
        if args.mode is not None and args.mode != model.cfg.mode:
            raise UsageError(f"checkpoint was trained in {model.cfg.mode} mode, not {args.mode}")
        if model.cfg.mode == "sequence":
            rep = evaluate(model, docs, threads=resolve_threads(args.threads))
        else:
            rep = evaluate(model, docs, _thresholds(args.iou), threads=resolve_threads(args.threads))
    for m, c, v in rep.rows():
        print(f"{m}\t{c}\t{v:.6f}")
    if args.out:
        _write_report_csv(args.out, rep)
    return EXIT_OK


def cmd_gradcheck(args, registry=None) -> int:
    from .gradsuite import TOLERANCE, run_checks

    rows = run_checks(registry, only=args.op, tol=TOLERANCE)
    if not rows:
        raise UsageError(f"no gradient check named {args.op!r}")
    for name, err, ok in rows:
        print(f"{name:<20} {err:.3e} {'pass' if ok else 'FAIL'}")
    return EXIT_OK if all(ok for _, _, ok in rows) else EXIT_FAIL


def _load_checkpoint(path: str):
    try:
        return load_model(path)
    except (OSError, checkpoint.CheckpointError, ConfigError, ValueError) as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from exc


def cmd_infer(args) -> int:
    from . import numcore as nc
    from .fusenet import dump_am
    from .relmod import dump_attention

    model = _load_checkpoint(args.checkpoint)
    docs = _corpus(args.corpus)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.dump_am and model.cfg.fusion != "adaptive":
        raise UsageError("--dump-am needs a checkpoint trained with adaptive fusion")
    lines = []
    for d, doc in enumerate(docs):
        with nc.no_grad():
            if model.cfg.mode == "sequence":
                fwd = model.forward_sequence(doc, with_loss=False)
                labels = [int(c) for c in fwd.rm.logits.data.argmax(axis=-1)]
                rec = {"doc": d, "id": doc.id, "labels": labels}
            else:
                fwd = model.forward_detection(doc, training=False, with_loss=False)
                dets = model.detections(doc, fwd)
                rec = {"doc": d, "id": doc.id, "detections": [
                    {"box": list(x.box), "class": x.class_id, "score": x.score} for x in dets]}
        lines.append(json.dumps(rec, sort_keys=True))
        stem = f"doc{d:04d}"
        if args.dump_am:
            dump_am(fwd.pyramid, args.dump_am, stem)
        if args.dump_attn:
            dump_attention(fwd.rm.attention, args.dump_attn, stem)
    out.write_text("\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote {len(lines)} records to {out}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    defaults = TrainConfig()
    cfg_help = ", ".join(f"{k}={v}" for k, v in defaults.to_dict().items())
    p = argparse.ArgumentParser(prog="doclayout", description="Layout analysis with fused vision and text grids.")
    p.add_argument("--threads", type=int, default=None, help="worker threads for evaluation (env VSR_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic JSONL corpus")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--spec", help="JSON file overriding generator settings")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model", epilog=f"config keys and defaults: {cfg_help}")
    t.add_argument("--config", help="JSON config; unknown keys are rejected")
    t.add_argument("--corpus", required=True)
    t.add_argument("--val", help="held-out corpus evaluated alongside training")
    t.add_argument("--out", required=True, help="output directory for model.ckpt and metrics.csv")
    t.add_argument("--mode", choices=("sequence", "detection"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--fusion", choices=("adaptive", "concat", "vision"))
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint or a detections file")
    e.add_argument("--checkpoint")
    e.add_argument("--detections", help="JSONL with {doc, detections: [{box, class, score}]}")
    e.add_argument("--corpus", required=True)
    e.add_argument("--mode", choices=("sequence", "detection"))
    e.add_argument("--iou", default="0.5", help="'coco' or comma-separated thresholds (default 0.5)")
    e.add_argument("--out", help="optional CSV report")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    g.add_argument("--op", help="run only the named check")
    g.set_defaults(func=cmd_gradcheck)

    i = sub.add_parser("infer", help="write predictions, optionally dumping gate and attention maps")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--corpus", required=True)
    i.add_argument("--out", default="predictions.jsonl")
    i.add_argument("--dump-am", dest="dump_am", help="directory for fusion gate PGMs")
    i.add_argument("--dump-attn", dest="dump_attn", help="directory for attention PGMs")
    i.set_defaults(func=cmd_infer)
    return p


def main(argv=None, gradcheck_registry=None) -> int:
    """Run one command; ``gradcheck_registry`` replaces the built-in gradient checks (for tests)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        resolve_threads(args.threads)
        if args.command == "gradcheck":
            return cmd_gradcheck(args, gradcheck_registry)
        return args.func(args)
    except (UsageError, ConfigError, GenerationError, CorpusError, DocumentError) as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
