"""Deterministic staged feature extractor with a per-stage FLOPs ledger.

The desk-scale default is three 3x3 conv stages (3->16->32->64 channels,
stride 2 each from a 32x32 input) followed by global average pooling and a
linear head. Parameters come from a seeded uniform init and are never
trained; the gates built on top are training-free, and real semantics can
be supplied instead through a feature manifest produced by an external
exporter. The cascade only needs per-stage features, pooled features, and
logits, so it is agnostic to where they came from.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, SizeError
from .tensor import as_tensor, read_tensor


@dataclass(frozen=True)
class StageSpec:
    """One conv stage: 3x3 kernel, stride 1 or 2, rectifier activation."""

    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 2

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")

    def out_extents(self, in_extents):
        c, h, w = in_extents
        if c != self.in_channels:
            raise SizeError(f"stage expects {self.in_channels} channels, got {c}")
        pad = self.kernel_size // 2
        oh = (h + 2 * pad - self.kernel_size) // self.stride + 1
        ow = (w + 2 * pad - self.kernel_size) // self.stride + 1
        return (self.out_channels, oh, ow)


@dataclass
class Backbone:
    """Immutable after init; forward passes over distinct samples are pure."""

    stages: tuple
    classes: int
    input_extents: tuple
    seed: int
    conv_weights: list = field(repr=False)
    conv_biases: list = field(repr=False)
    head_weight: np.ndarray = field(repr=False)
    head_bias: np.ndarray = field(repr=False)
    stage_extents: tuple = ()  # input extents of each stage, then of the head
    flops_ledger: tuple = ()   # one entry per conv stage plus one for the head

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def feature_dim(self) -> int:
        return self.stages[-1].out_channels


DEFAULT_STAGE_CHANNELS = (16, 32, 64)


def init_backbone(seed: int, classes: int, input_extents=(3, 32, 32)) -> Backbone:
    """Build the desk-scale backbone with seeded uniform parameters.

    Weights are drawn from ``U(-s, s)`` with ``s = 1/sqrt(fan_in)``; biases
    start at zero. The same seed always yields bit-identical parameters.
    """
    if classes < 2:
        raise ConfigError(f"classes must be >= 2, got {classes}")
    c, h, w = (int(x) for x in input_extents)
    if c <= 0 or h <= 0 or w <= 0:
        raise SizeError(f"input extents must be positive, got {input_extents}")

    stages = []
    in_ch = c
    for out_ch in DEFAULT_STAGE_CHANNELS:
        stages.append(StageSpec(in_channels=in_ch, out_channels=out_ch, stride=2))
        in_ch = out_ch

    rng = np.random.default_rng(seed)
    conv_weights, conv_biases = [], []
    extents = [(c, h, w)]
    for spec in stages:
        fan_in = spec.in_channels * spec.kernel_size**2
        bound = 1.0 / math.sqrt(fan_in)
        shape = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
        conv_weights.append(rng.uniform(-bound, bound, size=shape).astype(np.float32))
        conv_biases.append(np.zeros(spec.out_channels, dtype=np.float32))
        extents.append(spec.out_extents(extents[-1]))

    feat = stages[-1].out_channels
    bound = 1.0 / math.sqrt(feat)
    head_weight = rng.uniform(-bound, bound, size=(classes, feat)).astype(np.float32)
    head_bias = np.zeros(classes, dtype=np.float32)

    b = Backbone(
        stages=tuple(stages),
        classes=classes,
        input_extents=(c, h, w),
        seed=seed,
        conv_weights=conv_weights,
        conv_biases=conv_biases,
        head_weight=head_weight,
        head_bias=head_bias,
        stage_extents=tuple(extents),
    )
    ledger = tuple(stage_flops(b, i) for i in range(len(stages) + 1))
    b.flops_ledger = ledger
    return b


def forward_stage(b: Backbone, i: int, z_prev) -> np.ndarray:
    """Apply conv stage ``i`` (0-based): zero-padded 3x3 conv, bias, ReLU.

    Accumulates in float64 and returns float32; deterministic regardless of
    thread count.
    """
    if i < 0 or i >= b.n_stages:
        raise ConfigError(f"stage index {i} outside 0..{b.n_stages - 1}")
    z = as_tensor(z_prev)
    if z.ndim != 3:
        raise SizeError(f"expected a (C, H, W) input, got shape {z.shape}")
    expected = b.stage_extents[i]
    if tuple(z.shape) != expected:
        raise SizeError(f"stage {i} expects extents {expected}, got {tuple(z.shape)}")
    spec = b.stages[i]
    pad = spec.kernel_size // 2
    padded = np.pad(z.astype(np.float64), ((0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (spec.kernel_size, spec.kernel_size), axis=(1, 2))
    strided = windows[:, :: spec.stride, :: spec.stride]
    out = np.einsum(
        "ihwjk,oijk->ohw", strided, b.conv_weights[i].astype(np.float64), optimize=False
    )
    out += b.conv_biases[i].astype(np.float64)[:, None, None]
    np.maximum(out, 0.0, out=out)
    return out.astype(np.float32)


def global_average_pool(z) -> np.ndarray:
    """Spatial mean of a (C, H, W) map -> (C,) float32 vector."""
    z = as_tensor(z)
    if z.ndim != 3:
        raise SizeError(f"expected a (C, H, W) input, got shape {z.shape}")
    return z.astype(np.float64).mean(axis=(1, 2)).astype(np.float32)


def head_logits(b: Backbone, z_last) -> np.ndarray:
    """Global average pool the last stage's output and apply the linear head."""
    pooled = global_average_pool(z_last)
    if pooled.shape[0] != b.feature_dim:
        raise SizeError(f"head expects {b.feature_dim} features, got {pooled.shape[0]}")
    logits = b.head_weight.astype(np.float64) @ pooled.astype(np.float64)
    logits += b.head_bias.astype(np.float64)
    return logits.astype(np.float32)


def forward_all(b: Backbone, x):
    """Full pass: list of per-stage feature maps plus the final logits."""
    feats = []
    z = as_tensor(x)
    for i in range(b.n_stages):
        z = forward_stage(b, i, z)
        feats.append(z)
    return feats, head_logits(b, feats[-1])


def stage_flops(b: Backbone, i: int, gate=None) -> int:
    """Closed-form FLOPs of stage ``i`` (multiply-accumulates times two).

    ``i == n_stages`` queries the linear head. ``gate`` adds the rejection
    module that rides on the stage's output: ``"ses"`` costs one depth-wise
    3x3 pass plus spatial pooling, ``"she"`` costs one dot product per class
    against the pooled feature vector. ``gate=True`` picks the default
    attachment (ses on stage 0, she on stage 1).
    """
    if i < 0 or i > b.n_stages:
        raise ConfigError(f"stage index {i} outside 0..{b.n_stages}")
    if i == b.n_stages:
        base = 2 * b.feature_dim * b.classes
    else:
        spec = b.stages[i]
        oc, oh, ow = b.stage_extents[i + 1]
        base = 2 * oc * oh * ow * spec.in_channels * spec.kernel_size**2
    if gate is True:
        gate = "ses" if i == 0 else ("she" if i == 1 else None)
    if gate is None:
        return base
    return base + gate_overhead_flops(b, i, gate)


def gate_overhead_flops(b: Backbone, i: int, kind: str) -> int:
    """FLOPs of the rejection module attached to conv stage ``i``'s output."""
    if i < 0 or i >= b.n_stages:
        raise ConfigError(f"gate stage index {i} outside 0..{b.n_stages - 1}")
    oc, oh, ow = b.stage_extents[i + 1]
    if kind == "ses":
        return 2 * oc * oh * ow * 9 + oc * oh * ow
    if kind == "she":
        return 2 * b.classes * oc
    raise ConfigError(f"unknown gate kind {kind!r}")


@dataclass(frozen=True)
class ManifestEntry:
    """One sample of a feature manifest: per-stage TZR paths plus logits."""

    sample_id: str
    label: int  # -1 for unlabeled / OOD
    stage_paths: tuple
    logits_path: str | None = None


def load_feature_manifest(path) -> list:
    """Read a feature manifest (a JSON array of entry records).

    Paths are resolved relative to the manifest's directory; all referenced
    files must exist and the per-entry stage count must be consistent.
    """
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"manifest {path} is not valid JSON: {e}") from e
    if not isinstance(records, list):
        raise DataError(f"manifest {path} must be a JSON array of entries")
    base = path.parent
    entries = []
    n_stages = None
    for idx, rec in enumerate(records):
        try:
            stage_paths = tuple(str(base / p) for p in rec["stage_paths"])
            logits_path = rec.get("logits_path")
            entry = ManifestEntry(
                sample_id=str(rec["sample_id"]),
                label=int(rec.get("label", -1)),
                stage_paths=stage_paths,
                logits_path=str(base / logits_path) if logits_path else None,
            )
        except (KeyError, TypeError) as e:
            raise DataError(f"manifest entry {idx} malformed: {e}") from e
        if n_stages is None:
            n_stages = len(entry.stage_paths)
        elif len(entry.stage_paths) != n_stages:
            raise DataError(
                f"manifest entry {entry.sample_id} has {len(entry.stage_paths)} "
                f"stage paths, expected {n_stages}"
            )
        for p in entry.stage_paths + ((entry.logits_path,) if entry.logits_path else ()):
            if not Path(p).is_file():
                raise DataError(f"manifest references missing file {p}")
        entries.append(entry)
    return entries


def save_feature_manifest(entries, path) -> None:
    """Write entries as a JSON array with paths relative to the manifest dir."""
    path = Path(path)
    base = path.parent
    records = []
    for e in entries:
        rec = {
            "sample_id": e.sample_id,
            "label": e.label,
            "stage_paths": [str(Path(p).relative_to(base)) for p in e.stage_paths],
        }
        if e.logits_path:
            rec["logits_path"] = str(Path(e.logits_path).relative_to(base))
        records.append(rec)
    path.write_text(json.dumps(records, indent=1) + "\n")


def validate_feature_manifest(path) -> int:
    """Decode every file a manifest references; returns the entry count."""
    entries = load_feature_manifest(path)
    for e in entries:
        for p in e.stage_paths:
            read_tensor(p)
        if e.logits_path:
            read_tensor(e.logits_path)
    return len(entries)
