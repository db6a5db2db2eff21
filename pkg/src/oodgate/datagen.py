"""Synthetic desk-scale corpora with controlled spectral and semantic
structure.

Four kinds:

- ``id_natural``: random-phase fields with a 1/f^2 power spectrum and a
  class-specific dominant orientation band (class k peaks at
  k*pi/classes). Each class also owns a fixed coarse-scale phase template
  (corpus-independent, like a real dataset's class identity); per-sample
  randomness lives in the fine-texture phases. That layered construction
  is what lets a random-weights backbone transmit a usable class signal
  to pooled features while the radial spectrum stays exactly on the
  natural-image power law.
- ``ood_white_noise``: i.i.d. uniform pixels; flat spectrum, violates the
  spectral prior upward.
- ``ood_flat``: near-constant images with a faint smooth ramp; violates
  the prior downward.
- ``ood_semantic_shift``: the same spectral law and construction but with
  orientation bands (and templates) strictly between the ID classes, so
  the spectral gate has nothing to object to and only the semantic gate
  can catch them.

Generation is pure and seeded per sample, so corpora are reproducible and
trivially parallel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .tensor import write_tensor

KINDS = ("id_natural", "ood_white_noise", "ood_flat", "ood_semantic_shift")

# Field synthesis constants, frozen for reproducibility: radial power falls
# as 1/f^2 (normalized ring by ring so the law is exact on the discrete
# lattice), the orientation window is an axial von Mises of this
# concentration, phases below TEMPLATE_RADIUS cycles come from the class
# template, and TEMPLATE_SEED roots the corpus-independent template streams.
SPECTRAL_AMP_EXPONENT = 1.0
ORIENTATION_KAPPA = 12.0
TEMPLATE_RADIUS = 16.0
TEMPLATE_SEED = 20260810


@dataclass(frozen=True)
class CorpusSpec:
    kind: str
    n: int
    classes: int = 4
    extents: tuple = (3, 32, 32)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "extents", tuple(int(x) for x in self.extents))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown corpus kind {self.kind!r}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.kind == "id_natural" and self.classes < 2:
            raise ConfigError("id_natural requires at least 2 classes")
        c, h, w = self.extents
        if c < 1 or h < 8 or w < 8:
            raise ConfigError(f"extents too small: {self.extents}")


def _sample_rng(spec: CorpusSpec, index: int):
    return np.random.default_rng((spec.seed, KINDS.index(spec.kind), index))


def _spectral_amplitude(h: int, w: int, theta: float) -> np.ndarray:
    """Deterministic spectral magnitude: 1/f radial amplitude times an
    orientation window, renormalized per frequency ring so the radial power
    law holds exactly on the discrete lattice."""
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    freq = np.hypot(fy, fx)
    freq[0, 0] = 1.0
    angle = np.arctan2(fy, fx)
    # axial von Mises window: invariant under angle -> angle + pi
    window = np.exp(ORIENTATION_KAPPA * (np.cos(2.0 * (angle - theta)) - 1.0))
    # group lattice modes into exact rings via integer squared radius
    ring = np.round((fy * h) ** 2 + (fx * w) ** 2).astype(np.int64)
    power = window**2
    sums = np.bincount(ring.ravel(), weights=power.ravel())
    counts = np.bincount(ring.ravel())
    ring_mean = (sums / np.maximum(counts, 1))[ring]
    window = window / np.sqrt(np.maximum(ring_mean, 1e-300))
    amp = freq**-SPECTRAL_AMP_EXPONENT * window
    amp[0, 0] = 0.0
    return amp


def _field(rng, h: int, w: int, theta: float, template_key=None) -> np.ndarray:
    """One real field: deterministic magnitude, Hermitian random phases.

    With a ``template_key``, phases of modes below TEMPLATE_RADIUS cycles
    come from a fixed stream derived from the key, shared by every sample
    of the class regardless of corpus seed; only the higher-frequency
    texture phases vary per sample.
    """
    amp = _spectral_amplitude(h, w, theta)
    psi = rng.uniform(0.0, 2.0 * np.pi, size=(h, w))
    if template_key is not None:
        t_rng = np.random.default_rng((TEMPLATE_SEED, *template_key))
        template = t_rng.uniform(0.0, 2.0 * np.pi, size=(h, w))
        fy = np.fft.fftfreq(h)[:, None] * h
        fx = np.fft.fftfreq(w)[None, :] * w
        radius = np.hypot(fy, fx)
        psi = np.where(radius < TEMPLATE_RADIUS, template, psi)
    # antisymmetric phases keep the spectrum Hermitian, hence the field real
    mirrored = psi[(-np.arange(h)) % h][:, (-np.arange(w)) % w]
    spectrum = amp * np.exp(1j * (psi - mirrored))
    return np.fft.ifft2(spectrum).real


def _to_unit_range(field: np.ndarray) -> np.ndarray:
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo + 1e-12)


def _natural_image(rng, c, h, w, theta, template_key=None):
    chans = []
    for ch in range(c):
        key = None if template_key is None else (*template_key, ch)
        chans.append(_to_unit_range(_field(rng, h, w, theta, key)))
    return np.stack(chans)


def generate_sample(spec: CorpusSpec, index: int):
    """Generate sample ``index`` of a corpus: an image in [0, 1] and a label.

    Labels cycle through the ID classes; OOD kinds are labeled -1.
    """
    rng = _sample_rng(spec, index)
    c, h, w = spec.extents
    if spec.kind == "id_natural":
        label = index % spec.classes
        theta = label * math.pi / spec.classes
        img = _natural_image(rng, c, h, w, theta, template_key=(0, label))
        return img.astype(np.float32), label
    if spec.kind == "ood_semantic_shift":
        slot = index % spec.classes
        theta = (slot + 0.5) * math.pi / spec.classes
        img = _natural_image(rng, c, h, w, theta, template_key=(1, slot))
        return img.astype(np.float32), -1
    if spec.kind == "ood_white_noise":
        return rng.random((c, h, w)).astype(np.float32), -1
    # ood_flat: constant plus a faint smooth ramp
    base = 0.2 + 0.6 * rng.random()
    direction = rng.uniform(0.0, 2.0 * math.pi)
    yy = np.linspace(-0.5, 0.5, h)[:, None]
    xx = np.linspace(-0.5, 0.5, w)[None, :]
    ramp = math.cos(direction) * xx + math.sin(direction) * yy
    img = np.broadcast_to(base + 0.05 * ramp, (c, h, w))
    return np.clip(img, 0.0, 1.0).astype(np.float32), -1


def generate_corpus(spec: CorpusSpec):
    """All (image, label) pairs of a corpus; same spec, same corpus."""
    return [generate_sample(spec, i) for i in range(spec.n)]


def write_corpus(spec: CorpusSpec, out_dir, prefix: str | None = None) -> dict:
    """Generate a corpus and write it as TZR files plus ``manifest.json``.

    The manifest records the spec and one entry per sample
    (``sample_id``, ``label``, ``kind``, ``path``); reruns are
    byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or spec.kind
    records = []
    for i in range(spec.n):
        img, label = generate_sample(spec, i)
        name = f"{prefix}_{i:05d}.tzr"
        write_tensor(img, out_dir / name)
        records.append({"sample_id": f"{prefix}_{i:05d}", "label": label, "kind": spec.kind, "path": name})
    manifest = {
        "kind": spec.kind,
        "spec": {
            "kind": spec.kind,
            "n": spec.n,
            "classes": spec.classes,
            "extents": list(spec.extents),
            "seed": spec.seed,
        },
        "entries": records,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest
