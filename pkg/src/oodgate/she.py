"""Hyperspherical semantic energy over class prototypes.

Features are judged only by their direction: each class contributes a
unit-norm prototype and a positive concentration factor, and the energy is
the negative log-sum-exp of concentration-scaled cosine similarities. The
norm of the query cancels, which removes the magnitude channel that makes
plain logit energies mistake loud noise for confident inputs. A baseline
``magnitude_energy`` is kept around purely to demonstrate that failure.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, DegenerateClassError, FitError, SizeError, ValidationError
from .tensor import read_tensor, write_tensor

KAPPA_MIN = 1e-3
KAPPA_MAX = 1e4


@dataclass(frozen=True)
class PrototypeBank:
    """Per-class unit-norm prototypes plus concentration factors.

    Immutable after fitting; ``prototypes`` is ``(C, d)`` with unit rows,
    ``kappas`` is ``(C,)`` and strictly positive. ``labels`` records the
    class order, ``provenance`` the fit metadata (sample counts, weighting
    mode, any warnings).
    """

    prototypes: np.ndarray = field(repr=False)
    kappas: np.ndarray = field(repr=False)
    labels: tuple
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        protos = np.asarray(self.prototypes, dtype=np.float64)
        kappas = np.asarray(self.kappas, dtype=np.float64)
        if protos.ndim != 2:
            raise ValidationError("prototypes must be a (C, d) matrix")
        if kappas.shape != (protos.shape[0],):
            raise ValidationError("kappas must hold one value per prototype")
        norms = np.linalg.norm(protos, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-5):
            raise ValidationError("prototypes must be unit-norm within 1e-5")
        if np.any(kappas <= 0):
            raise ValidationError("kappas must be strictly positive")
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "kappas", kappas)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


def _class_arrays(features_by_class):
    """Normalize the per-class input to an ordered (label, (n, d) array) list."""
    if hasattr(features_by_class, "items"):
        items = list(features_by_class.items())
    else:
        items = list(enumerate(features_by_class))
    out = []
    dim = None
    for label, feats in items:
        arr = np.asarray(feats, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise SizeError(f"class {label}: features must be (n, d), got shape {arr.shape}")
        if arr.shape[0] == 0:
            raise FitError(f"class {label} has no samples")
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"class {label} has non-finite features")
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise SizeError(f"class {label} has feature dim {arr.shape[1]}, expected {dim}")
        out.append((label, arr))
    if not out:
        raise FitError("no classes supplied")
    return out


def fit_prototypes(features_by_class, weighting: str = "uniform") -> PrototypeBank:
    """Fit unit-norm class prototypes from per-class feature vectors.

    ``features_by_class`` maps labels to ``(n, d)`` arrays (or is a sequence,
    in which case positions are the labels). ``weighting="uniform"`` gives
    every sample weight one; ``"self-consistent"`` runs exactly one
    refinement pass, reweighting each sample by its clamped cosine to the
    uniform prototype. Kappas start at one; see :func:`estimate_kappa`.
    """
    if weighting not in ("uniform", "self-consistent"):
        raise FitError(f"unknown weighting {weighting!r}")
    classes = _class_arrays(features_by_class)
    protos, counts = [], []
    for label, arr in classes:
        vec = arr.sum(axis=0)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise DegenerateClassError(f"class {label}: weighted feature sum is zero")
        mu = vec / norm
        if weighting == "self-consistent":
            sample_norms = np.linalg.norm(arr, axis=1)
            if np.any(sample_norms == 0.0):
                raise DegenerateClassError(f"class {label}: zero-norm sample")
            w = np.maximum(0.0, (arr @ mu) / sample_norms)
            total = w.sum()
            if total == 0.0:
                raise DegenerateClassError(f"class {label}: all refinement weights vanished")
            w = w / total
            vec = (w[:, None] * arr).sum(axis=0)
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                raise DegenerateClassError(f"class {label}: refined feature sum is zero")
            mu = vec / norm
        protos.append(mu)
        counts.append(arr.shape[0])
    labels = tuple(label for label, _ in classes)
    return PrototypeBank(
        prototypes=np.stack(protos),
        kappas=np.ones(len(protos)),
        labels=labels,
        provenance={"weighting": weighting, "sample_counts": dict(zip(labels, counts))},
    )


def vmf_concentration(r_bar: float, dim: int) -> float:
    """Concentration estimate ``R(d - R^2) / (1 - R^2)`` from the mean
    resultant length of unit vectors; unclamped, diverges as R -> 1."""
    r = float(r_bar)
    if r >= 1.0:
        return np.inf
    return r * (dim - r * r) / (1.0 - r * r)


def estimate_kappa(features_by_class, bank: PrototypeBank) -> np.ndarray:
    """Per-class concentration from intra-class angular dispersion.

    Each class's features are L2-normalized and their mean resultant length
    feeds :func:`vmf_concentration`; results are clamped to
    ``[1e-3, 1e4]``. A single-sample class pegs the upper clamp and emits a
    warning, since its dispersion is unobservable.
    """
    classes = _class_arrays(features_by_class)
    if tuple(label for label, _ in classes) != bank.labels:
        raise FitError("class labels do not match the bank's label order")
    kappas = np.empty(len(classes))
    for j, (label, arr) in enumerate(classes):
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0.0):
            raise DegenerateClassError(f"class {label}: zero-norm sample")
        unit = arr / norms[:, None]
        r_bar = float(np.linalg.norm(unit.mean(axis=0)))
        kappa = vmf_concentration(r_bar, bank.dim)
        if arr.shape[0] == 1 or not np.isfinite(kappa):
            warnings.warn(
                f"class {label}: dispersion unobservable "
                f"(n={arr.shape[0]}, R={r_bar:.6f}); kappa clamped to {KAPPA_MAX}",
                stacklevel=2,
            )
            kappa = KAPPA_MAX
        kappas[j] = min(max(kappa, KAPPA_MIN), KAPPA_MAX)
    return kappas


def build_bank(features_by_class, weighting: str = "uniform", kappa_mode: str = "vmf") -> PrototypeBank:
    """Fit prototypes and concentrations in one step.

    ``kappa_mode="vmf"`` calibrates per-class concentration from angular
    dispersion; ``"uniform"`` keeps every kappa at one (the ablation mode).
    """
    bank = fit_prototypes(features_by_class, weighting=weighting)
    if kappa_mode == "uniform":
        kappas = np.ones(bank.n_classes)
    elif kappa_mode == "vmf":
        kappas = estimate_kappa(features_by_class, bank)
    else:
        raise FitError(f"unknown kappa_mode {kappa_mode!r}")
    prov = dict(bank.provenance)
    prov["kappa_mode"] = kappa_mode
    return replace(bank, kappas=kappas, provenance=prov)


def she_energy(z, bank: PrototypeBank, l2_normalize: bool = True) -> float:
    """Hyperspherical energy of a feature vector against the bank.

    ``-log sum_j exp(kappa_j * cos(z, mu_j))``, computed with a max-shifted
    log-sum-exp so the 1e4 kappa clamp cannot overflow. Scaling ``z`` by any
    positive factor leaves the value unchanged. ``l2_normalize=False``
    substitutes the raw dot product for the cosine (the degraded ablation
    variant; scale invariance is lost).
    """
    v = np.asarray(z, dtype=np.float64).ravel()
    if v.shape[0] != bank.dim:
        raise SizeError(f"feature dim {v.shape[0]} does not match bank dim {bank.dim}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("feature vector contains non-finite values")
    if l2_normalize:
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValidationError("zero feature vector: direction undefined")
        v = v / norm
    scores = bank.kappas * (bank.prototypes @ v)
    return float(-logsumexp(scores))


def magnitude_energy(z, alpha: float, classes: int) -> float:
    """Magnitude-dominated baseline energy ``-alpha * ||z|| - log(C)``.

    Diagnostic only: under this score a large-norm noise vector looks more
    in-distribution than a small, prototype-aligned one.
    """
    if alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    if classes < 1:
        raise ValidationError(f"classes must be >= 1, got {classes}")
    v = np.asarray(z, dtype=np.float64).ravel()
    return float(-alpha * np.linalg.norm(v) - np.log(classes))


def save_bank(bank: PrototypeBank, prefix) -> None:
    """Persist a bank as two TZR tensors plus a JSON provenance sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(bank.prototypes.astype(np.float32), prefix.with_suffix(".prototypes.tzr"))
    write_tensor(bank.kappas.astype(np.float32), prefix.with_suffix(".kappas.tzr"))
    sidecar = {"labels": list(bank.labels), "provenance": bank.provenance}
    prefix.with_suffix(".bank.json").write_text(json.dumps(sidecar, indent=1) + "\n")


def load_bank(prefix) -> PrototypeBank:
    """Load a bank persisted by :func:`save_bank`."""
    prefix = Path(prefix)
    try:
        sidecar = json.loads(prefix.with_suffix(".bank.json").read_text())
    except FileNotFoundError as e:
        raise DataError(f"bank sidecar missing: {e}") from e
    protos = read_tensor(prefix.with_suffix(".prototypes.tzr")).astype(np.float64)
    # float32 storage nudges norms off one; renormalize on load
    protos = protos / np.linalg.norm(protos, axis=1, keepdims=True)
    kappas = read_tensor(prefix.with_suffix(".kappas.tzr")).astype(np.float64)
    return PrototypeBank(
        prototypes=protos,
        kappas=kappas,
        labels=tuple(sidecar["labels"]),
        provenance=sidecar.get("provenance", {}),
    )
