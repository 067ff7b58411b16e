import json

import numpy as np
import pytest

from doclayout import numcore as nc
from doclayout.cli import UsageError, main, resolve_threads
from doclayout.docmodel import load_corpus
from doclayout.gradsuite import CHECKS
from doclayout.gridenc import read_pgm
from doclayout.numcore import Tensor, grad_check

SMALL = {"sem_dim": 4, "channels": [4, 4, 8, 8], "fpn_dim": 8, "d_node": 16, "heads": 2, "rm_layers": 1}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("c") / "docs.jsonl"
    assert main(["synth", "--seed", "5", "--count", "3", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus, small_config):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(small_config), "--corpus", str(corpus), "--out", str(out),
                 "--epochs", "1"]) == 0
    return out


class TestSynth:
    def test_writes_count_lines_and_is_reproducible(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["synth", "--seed", "1", "--count", "8", "--out", str(a)]) == 0
        assert main(["synth", "--seed", "1", "--count", "8", "--out", str(b)]) == 0
        assert len(a.read_text().splitlines()) == 8
        assert a.read_bytes() == b.read_bytes()
        assert len(load_corpus(a)) == 8

    def test_negative_count(self, tmp_path, capsys):
        assert main(["synth", "--count", "-1", "--out", str(tmp_path / "x.jsonl")]) == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_spec_key(self, tmp_path):
        spec = tmp_path / "s.json"
        spec.write_text('{"colour": 1}')
        assert main(["synth", "--count", "1", "--out", str(tmp_path / "x.jsonl"), "--spec", str(spec)]) == 2

    def test_missing_required_flag(self):
        assert main(["synth", "--out", "x"]) == 2


class TestTrain:
    def test_outputs(self, trained, capsys):
        assert (trained / "model.ckpt").is_file()
        header = (trained / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,split,metric,class,value"

    def test_two_runs_identical(self, tmp_path, corpus, small_config):
        for name in ("a", "b"):
            argv = ["train", "--config", str(small_config), "--corpus", str(corpus), "--out", str(tmp_path / name),
                    "--epochs", "2", "--seed", "3"]
            assert main(argv) == 0
        for f in ("metrics.csv", "model.ckpt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_missing_corpus(self, tmp_path):
        assert main(["train", "--corpus", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 2

    def test_unknown_config_key(self, tmp_path, corpus):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"learning_rate": 0.1}')
        assert main(["train", "--config", str(cfg), "--corpus", str(corpus), "--out", str(tmp_path)]) == 2

    def test_divergence_exit_code(self, tmp_path, corpus, small_config, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({**SMALL, "lr": 1e6, "momentum": 0.0}))
        assert main(["train", "--config", str(cfg), "--corpus", str(corpus), "--out", str(tmp_path / "r"),
                     "--epochs", "5"]) == 1
        assert "last good parameters" in capsys.readouterr().err


class TestEval:
    def write_dets(self, path, corpus, perfect):
        lines = []
        for d, doc in enumerate(load_corpus(corpus)):
            dets = [{"box": list(r.box), "class": r.class_id, "score": 1.0} for r in doc.regions] if perfect else []
            lines.append(json.dumps({"doc": d, "detections": dets}))
        path.write_text("\n".join(lines) + "\n")

    @pytest.mark.parametrize("perfect,expected", [(True, 1.0), (False, 0.0)])
    def test_detections_file(self, tmp_path, corpus, perfect, expected):
        dets = tmp_path / "d.jsonl"
        self.write_dets(dets, corpus, perfect)
        out = tmp_path / "r.csv"
        assert main(["eval", "--detections", str(dets), "--corpus", str(corpus), "--mode", "detection",
                     "--iou", "coco", "--out", str(out)]) == 0
        rows = {ln.split(",")[0]: float(ln.split(",")[2]) for ln in out.read_text().splitlines()[1:]
                if ",all," in ln}
        assert rows["map"] == expected

    def test_checkpoint(self, trained, corpus, capsys):
        assert main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--corpus", str(corpus)]) == 0
        assert "macro_f1" in capsys.readouterr().out

    def test_needs_exactly_one_source(self, corpus):
        assert main(["eval", "--corpus", str(corpus)]) == 2

    def test_bad_iou(self, tmp_path, corpus):
        dets = tmp_path / "d.jsonl"
        self.write_dets(dets, corpus, True)
        assert main(["eval", "--detections", str(dets), "--corpus", str(corpus), "--iou", "1.5"]) == 2


class TestGradcheck:
    def test_single_op(self, capsys):
        assert main(["gradcheck", "--op", "layerNorm"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 1 and out[0].startswith("layerNorm") and out[0].endswith("pass")

    def test_unknown_op(self):
        assert main(["gradcheck", "--op", "noSuchOp"]) == 2

    def test_injected_broken_op_fails(self, capsys):
        def broken():
            x = Tensor(np.array([0.3, -0.7]), requires_grad=True)
            bad_square = lambda t: Tensor._make(t.data ** 2, (t,), lambda g: (g * t.data,))  # noqa: E731
            return grad_check(lambda: nc.sum_(bad_square(x)), {"x": x})

        registry = {"relu": CHECKS["relu"], "badSquare": broken}
        assert main(["gradcheck"], gradcheck_registry=registry) == 1
        out = capsys.readouterr().out
        assert "badSquare" in out and "FAIL" in out

    def test_full_suite_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == len(CHECKS)


class TestInfer:
    def test_dumps(self, tmp_path, trained, corpus):
        out = tmp_path / "p.jsonl"
        am, attn = tmp_path / "am", tmp_path / "attn"
        assert main(["infer", "--checkpoint", str(trained / "model.ckpt"), "--corpus", str(corpus), "--out", str(out),
                     "--dump-am", str(am), "--dump-attn", str(attn)]) == 0
        recs = [json.loads(ln) for ln in out.read_text().splitlines()]
        assert len(recs) == 3 and all("labels" in r for r in recs)
        maps = sorted(am.glob("doc0000_am*.pgm"))
        assert len(maps) == 4
        assert read_pgm(maps[0]).shape == (16, 16)
        assert list(attn.glob("doc0000*.pgm"))

    def test_unreadable_checkpoint(self, tmp_path, corpus):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        assert main(["infer", "--checkpoint", str(bad), "--corpus", str(corpus)]) == 2


class TestThreads:
    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("VSR_THREADS", "3")
        assert resolve_threads(None) == 3
        assert resolve_threads(2) == 2

    def test_invalid(self, monkeypatch):
        monkeypatch.setenv("VSR_THREADS", "zero")
        with pytest.raises(UsageError):
            resolve_threads(None)
        with pytest.raises(UsageError):
            resolve_threads(0)

    def test_threaded_eval_matches_serial(self, trained, corpus, capsys):
        ckpt = str(trained / "model.ckpt")
        main(["eval", "--checkpoint", ckpt, "--corpus", str(corpus)])
        serial = capsys.readouterr().out
        main(["--threads", "3", "eval", "--checkpoint", ckpt, "--corpus", str(corpus)])
        assert capsys.readouterr().out == serial
