"""Deterministic image degradations: sensor faults, adverse environment,
transmission loss.

Four families, five severities each. Every parameter is a frozen function
of (family, severity, seed), so the same spec always produces the same
bytes. Inputs and outputs are (C, H, W) tensors in [0, 1].

Severity tables are this package's own calibration; they are fixed here
for reproducibility:

=================  ----------------------------------------------
dead_pixels        fraction of pixel sites forced to 0 or 1:
                   1%, 2%, 4%, 8%, 16%
striping           per-row additive offset amplitude:
                   0.05, 0.10, 0.18, 0.28, 0.40
fog_low_exposure   fog blend weight 0.2 .. 0.7, exposure gamma
                   1.2 .. 2.5, warm channels damped up to 8%
transmission       8x8 block means quantized to 32 .. 4 levels,
                   plus 1 .. 4 uniform-noise patches of (H/4)^2 px
=================  ----------------------------------------------
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .tensor import as_tensor, write_tensor

FAMILIES = ("dead_pixels", "striping", "fog_low_exposure", "transmission")

DEAD_PIXEL_FRACTION = {1: 0.01, 2: 0.02, 3: 0.04, 4: 0.08, 5: 0.16}
STRIPE_AMPLITUDE = {1: 0.05, 2: 0.10, 3: 0.18, 4: 0.28, 5: 0.40}
FOG_WEIGHT = {1: 0.20, 2: 0.325, 3: 0.45, 4: 0.575, 5: 0.70}
FOG_GAMMA = {1: 1.2, 2: 1.525, 3: 1.85, 4: 2.175, 5: 2.5}
FOG_GRAY = 0.7
QUANT_LEVELS = {1: 32, 2: 24, 3: 16, 4: 8, 5: 4}
NOISE_PATCHES = {1: 1, 2: 2, 3: 2, 4: 3, 5: 4}
BLOCK = 8


@dataclass(frozen=True)
class CorruptionSpec:
    family: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown corruption family {self.family!r}")
        if self.severity not in (1, 2, 3, 4, 5):
            raise ConfigError(f"severity must be 1..5, got {self.severity}")

    def tag(self) -> str:
        return f"{self.family}_s{self.severity}_r{self.seed}"


def _rng(spec: CorruptionSpec, sample_key: int = 0):
    return np.random.default_rng(
        (spec.seed, FAMILIES.index(spec.family), spec.severity, sample_key)
    )


def apply_corruption(img, spec: CorruptionSpec, sample_key: int = 0) -> np.ndarray:
    """Degrade one image; deterministic given (img, spec, sample_key).

    ``sample_key`` decorrelates the random draws across a corpus while
    keeping them reproducible; pass the sample index when corrupting many
    images under one spec.
    """
    x = as_tensor(img)
    if x.ndim != 3:
        raise ValidationError(f"expected a (C, H, W) image, got shape {x.shape}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValidationError("image values must lie in [0, 1]")
    rng = _rng(spec, sample_key)
    out = _FAMILY_FNS[spec.family](x.astype(np.float64), spec.severity, rng)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _dead_pixels(x, severity, rng):
    c, h, w = x.shape
    n_sites = int(DEAD_PIXEL_FRACTION[severity] * h * w)
    sites = rng.choice(h * w, size=n_sites, replace=False)
    values = rng.integers(0, 2, size=n_sites).astype(np.float64)
    out = x.copy()
    rows, cols = np.divmod(sites, w)
    out[:, rows, cols] = values[None, :]
    return out


def _striping(x, severity, rng):
    _, h, _ = x.shape
    amp = STRIPE_AMPLITUDE[severity]
    offsets = rng.uniform(-amp, amp, size=h)
    return x + offsets[None, :, None]


def _fog_low_exposure(x, severity, rng):
    frac = severity / 5.0
    out = x.copy()
    # warm-to-cool shift: damp red strongly, green mildly, leave blue
    if out.shape[0] >= 3:
        out[0] *= 1.0 - 0.08 * frac
        out[1] *= 1.0 - 0.04 * frac
    w = FOG_WEIGHT[severity]
    out = (1.0 - w) * out + w * FOG_GRAY
    return np.power(out, FOG_GAMMA[severity])


def _transmission(x, severity, rng):
    c, h, w = x.shape
    levels = QUANT_LEVELS[severity]
    out = np.empty_like(x)
    for top in range(0, h, BLOCK):
        for left in range(0, w, BLOCK):
            block = x[:, top : top + BLOCK, left : left + BLOCK]
            mean = block.mean(axis=(1, 2))
            out[:, top : top + BLOCK, left : left + BLOCK] = (
                np.round(mean * (levels - 1)) / (levels - 1)
            )[:, None, None]
    side = -(-h // 4)  # ceil(H/4)
    for _ in range(NOISE_PATCHES[severity]):
        top = int(rng.integers(0, max(1, h - side + 1)))
        left = int(rng.integers(0, max(1, w - side + 1)))
        patch = rng.uniform(0.0, 1.0, size=(c, min(side, h - top), min(side, w - left)))
        out[:, top : top + patch.shape[1], left : left + patch.shape[2]] = patch
    return out


_FAMILY_FNS = {
    "dead_pixels": _dead_pixels,
    "striping": _striping,
    "fog_low_exposure": _fog_low_exposure,
    "transmission": _transmission,
}


def build_corrupted_corpus(entries, specs, out_dir) -> dict:
    """Corrupt every (image, id) pair under every spec and write TZR files.

    ``entries`` is a sequence of ``(source_id, image)`` pairs. Writes one
    tensor per (image, spec) plus ``manifest.json`` recording each spec;
    rerunning with identical inputs reproduces identical bytes. Returns the
    manifest document.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for spec in specs:
        for key, (source_id, img) in enumerate(entries):
            corrupted = apply_corruption(img, spec, sample_key=key)
            name = f"{source_id}_{spec.tag()}.tzr"
            write_tensor(corrupted, out_dir / name)
            records.append(
                {
                    "source_id": str(source_id),
                    "family": spec.family,
                    "severity": spec.severity,
                    "seed": spec.seed,
                    "path": name,
                }
            )
    manifest = {"entries": records}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest
