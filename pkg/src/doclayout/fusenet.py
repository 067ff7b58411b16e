"""Two-stream micro-backbone, adaptive multi-scale fusion and a top-down pyramid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .docmodel import Document
from .gridenc import EmbeddingTables, build_s0, write_pgm
from .numcore import ParamStore, ShapeError, Tensor

SCALES = (2, 3, 4, 5)
FUSIONS = ("adaptive", "concat", "vision")


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple[int, int, int, int] = (16, 32, 32, 32)
    blocks_per_stage: int = 1
    fpn_dim: int = 32

    def __post_init__(self):
        if len(self.channels) != 4 or any(c <= 0 for c in self.channels):
            raise ValueError(f"need 4 positive channel widths, got {self.channels}")
        if self.blocks_per_stage < 1 or self.fpn_dim < 1:
            raise ValueError("blocks_per_stage and fpn_dim must be positive")


@dataclass
class FeaturePyramid:
    v: list[Tensor]
    s: list[Tensor] = field(default_factory=list)
    am: list[Tensor] = field(default_factory=list)
    fm: list[Tensor] = field(default_factory=list)
    p: list[Tensor] = field(default_factory=list)


class Stream:
    """Stack of (conv3x3 -> relu)*blocks -> maxpool2 stages; emits scales 2..5."""

    def __init__(self, store: ParamStore, prefix: str, in_ch: int, cfg: BackboneConfig):
        self.cfg = cfg
        c2 = cfg.channels[0]
        widths = [c2, c2, *cfg.channels[1:]]  # two reductions before V2
        self.stages: list[list[tuple[nc.Parameter, nc.Parameter]]] = []
        prev = in_ch
        for si, out_ch in enumerate(widths):
            convs = []
            for bi in range(cfg.blocks_per_stage):
                cin = prev if bi == 0 else out_ch
                w = store.uniform(f"{prefix}.stage{si}.conv{bi}.w", (3, 3, cin, out_ch), fan_in=9 * cin)
                b = store.zeros(f"{prefix}.stage{si}.conv{bi}.b", (out_ch,))
                convs.append((w, b))
            self.stages.append(convs)
            prev = out_ch

    def __call__(self, x: Tensor) -> list[Tensor]:
        h, w = x.shape[-3], x.shape[-2]
        if h % 32 or w % 32:
            raise ShapeError(f"input {h}x{w} must be divisible by 32")
        outs = []
        for si, convs in enumerate(self.stages):
            for wt, b in convs:
                x = nc.relu(nc.conv2d(x, wt, b, stride=1, pad=1))
            x = nc.max_pool2d(x)
            if si >= 1:
                outs.append(x)
        return outs


def fuse_with_map(v, s, am) -> Tensor:
    """``am*v + (1-am)*s``; exact at the endpoints am in {0, 1/2, 1}."""
    return nc.add(nc.mul(am, v), nc.mul(nc.sub(1.0, am), s))


def adaptive_aggregate(v: Tensor, s: Tensor, w, b) -> tuple[Tensor, Tensor]:
    """Gate map from a 1x1 conv over [v; s], squashed by a sigmoid, then a convex blend."""
    if v.shape != s.shape:
        raise ShapeError(f"visual {v.shape} and semantic {s.shape} features must match")
    am = nc.sigmoid(nc.conv2d(nc.concat([v, s], axis=-1), w, b))
    return am, fuse_with_map(v, s, am)


def concat_aggregate(v: Tensor, s: Tensor, w, b) -> Tensor:
    if v.shape != s.shape:
        raise ShapeError(f"visual {v.shape} and semantic {s.shape} features must match")
    return nc.conv2d(nc.concat([v, s], axis=-1), w, b)


class FPN:
    def __init__(self, store: ParamStore, prefix: str, in_channels, dim: int):
        self.dim = dim
        self.lateral = []
        self.smooth = []
        for i, c in zip(SCALES, in_channels):
            self.lateral.append(
                (store.uniform(f"{prefix}.lat{i}.w", (1, 1, c, dim), fan_in=c), store.zeros(f"{prefix}.lat{i}.b", (dim,)))
            )
            self.smooth.append(
                (
                    store.uniform(f"{prefix}.smooth{i}.w", (3, 3, dim, dim), fan_in=9 * dim),
                    store.zeros(f"{prefix}.smooth{i}.b", (dim,)),
                )
            )

    def __call__(self, fm: list[Tensor]) -> list[Tensor]:
        return fpn_enhance(fm, self.lateral, self.smooth)


def fpn_enhance(fm: list[Tensor], lateral, smooth) -> list[Tensor]:
    """Top-down pathway: lateral 1x1, nearest x2 upsample + add, 3x3 smoothing."""
    lat = [nc.conv2d(f, w, b) for f, (w, b) in zip(fm, lateral)]
    merged = [None] * len(lat)
    merged[-1] = lat[-1]
    for i in range(len(lat) - 2, -1, -1):
        merged[i] = nc.add(lat[i], nc.upsample2x(merged[i + 1]))
    return [nc.conv2d(m, w, b, stride=1, pad=1) for m, (w, b) in zip(merged, smooth)]


class FuseNet:
    """Both streams, per-scale fusion and the FPN, with their parameters.

    ``fusion`` is ``"adaptive"`` (learned gate), ``"concat"`` (channel
    concatenation + 1x1 conv) or ``"vision"`` (no semantic stream).
    """

    def __init__(self, store: ParamStore, sem_channels: int, cfg: BackboneConfig | None = None,
                 fusion: str = "adaptive", prefix: str = "fuse"):
        if fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {fusion!r}")
        self.cfg = cfg or BackboneConfig()
        self.fusion = fusion
        self.visual = Stream(store, f"{prefix}.visual", 3, self.cfg)
        self.semantic = Stream(store, f"{prefix}.semantic", sem_channels, self.cfg) if fusion != "vision" else None
        self.gates = []
        if fusion != "vision":
            for i, c in zip(SCALES, self.cfg.channels):
                self.gates.append(
                    (store.uniform(f"{prefix}.agg{i}.w", (1, 1, 2 * c, c), fan_in=2 * c), store.zeros(f"{prefix}.agg{i}.b", (c,)))
                )
        self.fpn = FPN(store, f"{prefix}.fpn", self.cfg.channels, self.cfg.fpn_dim)

    def __call__(self, image: Tensor, s0: Tensor | None, force_am: float | None = None) -> FeaturePyramid:
        v = self.visual(image)
        pyr = FeaturePyramid(v=v)
        if self.fusion == "vision":
            pyr.fm = list(v)
        else:
            if s0 is None:
                raise ValueError("semantic input required for two-stream fusion")
            s = self.semantic(s0)
            pyr.s = s
            for vi, si, (w, b) in zip(v, s, self.gates):
                if force_am is not None:
                    am = Tensor(np.full(vi.shape, float(force_am)))
                    fm = fuse_with_map(vi, si, am)
                elif self.fusion == "adaptive":
                    am, fm = adaptive_aggregate(vi, si, w, b)
                else:
                    am, fm = None, concat_aggregate(vi, si, w, b)
                if am is not None:
                    pyr.am.append(am)
                pyr.fm.append(fm)
        pyr.p = self.fpn(pyr.fm)
        return pyr


def image_tensor(doc: Document) -> Tensor:
    return Tensor(doc.raster.astype(np.float64))


def forward_fuse(doc: Document, tables: EmbeddingTables, net: FuseNet, use_char: bool = True,
                 use_sent: bool = True, force_am: float | None = None) -> FeaturePyramid:
    s0 = None
    if net.fusion != "vision":
        s0 = build_s0(doc, tables, use_char=use_char, use_sent=use_sent).s0
    return net(image_tensor(doc), s0, force_am=force_am)


def dump_am(pyr: FeaturePyramid, out_dir, stem: str) -> list[Path]:
    """Channel-averaged gate map per scale as PGM, with a min/max sidecar JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ranges = {}
    paths = []
    for i, am in zip(SCALES, pyr.am):
        p = out / f"{stem}_am{i}.pgm"
        lo, hi = write_pgm(p, am.data.mean(axis=-1))
        ranges[p.name] = {"min": lo, "max": hi}
        paths.append(p)
    (out / f"{stem}_am.json").write_text(json.dumps(ranges, indent=1, sort_keys=True))
    return paths
