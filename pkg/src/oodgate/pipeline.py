"""Batch flows that wire the modules together: corpus loading, prototype
fitting, gate calibration from a held-out split, and corpus evaluation.

Everything here is a pure function of (config, data); the CLI is a thin
shell around these entry points, and they are equally usable from a
script or notebook.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import (
    Backbone,
    ManifestEntry,
    forward_stage,
    global_average_pool,
    head_logits,
    init_backbone,
    load_feature_manifest,
)
from .cascade import (
    CalibrationBudget,
    calibrate_gates,
    energy_score,
    expected_flops,
    msp_score,
    run_cascade,
)
from .config import RunConfig
from .errors import DataError
from .metrics import auroc, cascade_score_set, exit_histogram, fpr_at_tpr
from .she import build_bank, she_energy
from .ses import SesConfig, channel_energy, laplacian_response, ses_score, top_k_channels
from .tensor import read_tensor


@dataclass(frozen=True)
class Sample:
    """One evaluatable unit: an image (in memory or on disk) or a
    feature-manifest entry."""

    sample_id: str
    label: int
    payload: object  # ndarray image, image path (str), or ManifestEntry

    def load(self):
        if isinstance(self.payload, (ManifestEntry, np.ndarray)):
            return self.payload
        return read_tensor(self.payload)


def load_samples(manifest_path) -> list:
    """Load any supported manifest into a list of :class:`Sample`.

    Knows three layouts: feature manifests (JSON array with
    ``stage_paths``), corpus manifests from the generator or the corruption
    tool (object with an ``entries`` array holding ``path`` fields).
    """
    path = Path(manifest_path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise DataError(f"manifest not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"manifest {path} is not valid JSON: {e}") from e

    if isinstance(doc, list):
        return [
            Sample(e.sample_id, e.label, e) for e in load_feature_manifest(path)
        ]
    if isinstance(doc, dict) and "entries" in doc:
        samples = []
        for idx, rec in enumerate(doc["entries"]):
            if "path" not in rec:
                raise DataError(f"manifest entry {idx} lacks a 'path' field")
            rel = path.parent / rec["path"]
            if not rel.is_file():
                raise DataError(f"manifest references missing file {rel}")
            if "sample_id" in rec:
                sid = str(rec["sample_id"])
            else:
                sid = f"{rec.get('source_id', idx)}_{rec.get('family', 'img')}_s{rec.get('severity', 0)}"
            samples.append(Sample(sid, int(rec.get("label", -1)), str(rel)))
        if not samples:
            raise DataError(f"manifest {path} holds no entries")
        return samples
    raise DataError(f"manifest {path} has an unrecognized layout")


def build_backbone(cfg: RunConfig) -> Backbone:
    return init_backbone(cfg.backbone_seed, cfg.classes, cfg.input_extents)


def _stage_channels(backbone: Backbone, stage: int, sample) -> int:
    if isinstance(sample, ManifestEntry):
        return read_tensor(sample.stage_paths[stage - 1]).shape[0]
    return backbone.stage_extents[stage][0]


def ses_config_for(cfg: RunConfig, channels: int) -> SesConfig:
    if cfg.ses_top_k is not None:
        return SesConfig(top_k=cfg.ses_top_k, epsilon=cfg.ses_epsilon)
    return SesConfig.for_channels(channels, epsilon=cfg.ses_epsilon)


class _FeatureRunner:
    """Computes the per-stage gate inputs for one sample, either through the
    backbone or from a feature manifest entry."""

    def __init__(self, backbone: Backbone, cfg: RunConfig):
        self.backbone = backbone
        self.cfg = cfg

    def stage_maps(self, sample):
        if isinstance(sample, ManifestEntry):
            maps = [read_tensor(p) for p in sample.stage_paths]
            if not sample.logits_path:
                raise DataError(f"sample {sample.sample_id}: manifest entry has no logits")
            logits = read_tensor(sample.logits_path)
            return maps, logits
        maps = []
        z = sample
        for i in range(self.backbone.n_stages):
            z = forward_stage(self.backbone, i, z)
            maps.append(z)
        return maps, head_logits(self.backbone, maps[-1])

    def gate_inputs(self, sample):
        """(ses feature map, pooled she vector, logits) for one sample."""
        maps, logits = self.stage_maps(sample)
        ses_map = maps[self.cfg.ses_stage - 1]
        she_map = maps[self.cfg.she_stage - 1]
        pooled = global_average_pool(she_map) if she_map.ndim == 3 else she_map
        return ses_map, pooled, logits


def fit_bank(samples, backbone: Backbone, cfg: RunConfig):
    """Fit the prototype bank from labeled samples (pooled she-stage features)."""
    runner = _FeatureRunner(backbone, cfg)
    by_class = {}
    for s in samples:
        if s.label < 0:
            raise DataError(f"sample {s.sample_id} is unlabeled; cannot fit prototypes")
        _, pooled, _ = runner.gate_inputs(s.load())
        by_class.setdefault(s.label, []).append(np.asarray(pooled, dtype=np.float64))
    ordered = {k: np.stack(v) for k, v in sorted(by_class.items())}
    return build_bank(ordered, weighting=cfg.she_weighting, kappa_mode=cfg.she_kappa_mode)


def global_omega(samples, backbone: Backbone, cfg: RunConfig):
    """Fixed top-K channel subset from mean channel energies over samples."""
    runner = _FeatureRunner(backbone, cfg)
    total = None
    for s in samples:
        ses_map, _, _ = runner.gate_inputs(s.load())
        e = channel_energy(laplacian_response(ses_map), cfg.ses_epsilon)
        total = e if total is None else total + e
    ses_cfg = ses_config_for(cfg, total.shape[0])
    return top_k_channels(total / len(samples), ses_cfg.top_k)


@dataclass
class CalibrationResult:
    bank: object
    gates: list
    omega: object  # channel index array or None
    split: dict    # fit/calibration sample ids


def split_samples(samples, cfg: RunConfig):
    """Deterministic shuffle split into (fit, calibration) parts."""
    order = np.random.default_rng(cfg.split_seed).permutation(len(samples))
    n_fit = int(round(cfg.split_fraction * len(samples)))
    fit = [samples[i] for i in order[:n_fit]]
    cal = [samples[i] for i in order[n_fit:]]
    return fit, cal


def calibrate_pipeline(id_samples, backbone: Backbone, cfg: RunConfig) -> CalibrationResult:
    """Fit prototypes on the larger split, calibrate gates on the held-out rest.

    Raises if any class is missing from the fit split (its prototype would
    be undefined).
    """
    fit, cal = split_samples(id_samples, cfg)
    fit_labels = {s.label for s in fit}
    all_labels = {s.label for s in id_samples}
    missing = sorted(all_labels - fit_labels)
    if missing:
        raise DataError(f"classes {missing} absent from the fit split; reseed or enlarge the corpus")
    bank = fit_bank(fit, backbone, cfg)
    omega = global_omega(fit, backbone, cfg) if cfg.ses_global_omega else None

    runner = _FeatureRunner(backbone, cfg)
    per_stage = ([], [], [])
    first_channels = None
    for s in cal:
        ses_map, pooled, logits = runner.gate_inputs(s.load())
        if first_channels is None:
            first_channels = ses_map.shape[0]
        ses_cfg = ses_config_for(cfg, ses_map.shape[0])
        per_stage[0].append(ses_score(ses_map, ses_cfg, omega=omega))
        per_stage[1].append(she_energy(pooled, bank, l2_normalize=cfg.she_l2_normalize))
        final = energy_score(logits) if cfg.final_scorer == "energy" else msp_score(logits)
        per_stage[2].append(final)

    budget = CalibrationBudget(cfg.early_retention, cfg.final_tpr)
    gates = calibrate_gates(
        per_stage, budget, score_kinds=("ses", "she", cfg.final_score_kind)
    )
    # anchor the early gates to their configured stages
    gates[0] = _restage(gates[0], cfg.ses_stage)
    gates[1] = _restage(gates[1], cfg.she_stage)
    gates[2] = _restage(gates[2], cfg.she_stage + 1)
    return CalibrationResult(
        bank=bank,
        gates=gates,
        omega=omega,
        split={
            "fit_ids": [s.sample_id for s in fit],
            "calibration_ids": [s.sample_id for s in cal],
        },
    )


def _restage(gate, stage):
    from dataclasses import replace

    return replace(gate, stage=stage)


def run_outcomes(samples, backbone: Backbone, bank, gates, cfg: RunConfig, omega=None):
    """Cascade outcomes for a corpus; `cfg.jobs` controls thread fan-out.

    Outcomes are returned in corpus order regardless of the worker count.
    """
    channels = _stage_channels(backbone, cfg.ses_stage, samples[0].payload) if samples else 0
    ses_cfg = ses_config_for(cfg, channels) if samples else None

    def one(s: Sample):
        return run_cascade(
            s.load(),
            backbone,
            bank,
            gates,
            ses_cfg=ses_cfg,
            ses_omega=omega,
            l2_normalize=cfg.she_l2_normalize,
            sample_id=s.sample_id,
        )

    if cfg.jobs <= 1:
        return [one(s) for s in samples]
    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(one, samples))


def evaluate_pipeline(id_samples, ood_corpora, backbone, bank, gates, cfg, omega=None):
    """Score every OOD corpus against the ID corpus.

    Returns (report_rows, histograms, outcomes): one report row per corpus
    keyed like ``REPORT_COLUMNS``, exit histograms per corpus (ID corpus
    included under ``"id"``), and raw outcomes per corpus.
    """
    n_early = len(gates) - 1
    id_outcomes = run_outcomes(id_samples, backbone, bank, gates, cfg, omega)
    hists = {"id": exit_histogram(id_outcomes, n_early)}
    outcomes = {"id": id_outcomes}
    rows = []
    for name, samples in ood_corpora.items():
        ood_outcomes = run_outcomes(samples, backbone, bank, gates, cfg, omega)
        outcomes[name] = ood_outcomes
        hist = exit_histogram(ood_outcomes, n_early)
        hists[name] = hist
        scores = cascade_score_set(id_outcomes, ood_outcomes, gates)
        flops = expected_flops(id_outcomes + ood_outcomes, backbone, gates)
        rows.append(
            {
                "dataset": name,
                "score_kind": f"cascade-{cfg.final_scorer}",
                "auroc": auroc(scores),
                "fpr95": fpr_at_tpr(scores, 0.95),
                "avg_flops": flops["avg_flops"],
                "savings_pct": flops["savings_pct"],
                "exit_frac_stage1": hist["stage_1"].fraction if "stage_1" in hist else 0.0,
                "exit_frac_stage2": hist["stage_2"].fraction if "stage_2" in hist else 0.0,
                "exit_frac_final_rejected": hist["final_rejected"].fraction,
                "exit_frac_final_accepted": hist["final_accepted"].fraction,
            }
        )
    return rows, hists, outcomes
