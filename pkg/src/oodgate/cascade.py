"""Rejection gates, acceptance-region calibration, and the conditional
execution chain.

A cascade is a list of gates ordered by stage. Early gates hold two-sided
acceptance intervals over their stage's score; the final gate holds a
one-sided threshold over the closing scorer (logit energy or max softmax
probability). A sample walks the stages in order, pays each stage's FLOPs
as it goes, and halts at the first gate whose score falls outside the
acceptance region; later stages are never computed. Gate intervals come
from empirical quantiles of held-out in-distribution scores, with the
per-stage retention budget chosen so the whole chain keeps the target
fraction of in-distribution traffic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .backbone import (
    Backbone,
    ManifestEntry,
    forward_stage,
    gate_overhead_flops,
    global_average_pool,
    head_logits,
)
from .errors import CalibrationError, ConfigError, DataError, SizeError
from .ses import SesConfig, ses_score
from .she import PrototypeBank, she_energy
from .tensor import as_tensor, read_tensor

FINAL_STAGE = "final"

SCORE_KINDS = ("ses", "she", "final-energy", "final-msp")


@dataclass(frozen=True)
class GateConfig:
    """Acceptance region ``[lo, hi]`` over one stage's score (closed interval)."""

    stage: int
    score_kind: str
    lo: float
    hi: float
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.score_kind not in SCORE_KINDS:
            raise ConfigError(f"unknown score_kind {self.score_kind!r}")
        if self.stage < 1:
            raise ConfigError(f"stage must be >= 1, got {self.stage}")
        if not self.lo <= self.hi:
            raise ConfigError(f"gate interval inverted: lo={self.lo} > hi={self.hi}")

    @property
    def is_final(self) -> bool:
        return self.score_kind.startswith("final-")


@dataclass(frozen=True)
class CalibrationBudget:
    """Per-stage in-distribution retention targets and the final TPR target.

    Each early gate may reject at most ``1 - r_i`` of in-distribution
    traffic; the final threshold spends whatever budget remains, so the
    product of early retentions must not undershoot the final TPR.
    """

    early_retention: tuple
    final_tpr: float = 0.95

    def __post_init__(self):
        object.__setattr__(self, "early_retention", tuple(float(r) for r in self.early_retention))
        for r in self.early_retention:
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"retention targets must be in (0, 1], got {r}")
        if not 0.0 < self.final_tpr < 1.0:
            raise ConfigError(f"final_tpr must be in (0, 1), got {self.final_tpr}")
        if self.product_retention < self.final_tpr:
            raise ConfigError(
                f"infeasible budget: early retentions multiply to "
                f"{self.product_retention:.6f} < final_tpr {self.final_tpr}"
            )

    @property
    def product_retention(self) -> float:
        return float(np.prod(self.early_retention)) if self.early_retention else 1.0


def _tail_count(n: int, tail_fraction: float) -> int:
    # nearest-integer trim keeps measured retention within 1/N of target
    return int(math.floor(n * tail_fraction + 0.5))


def calibrate_gates(id_val_scores, budget: CalibrationBudget, score_kinds=None) -> list:
    """Fit one gate per stage from held-out in-distribution scores.

    ``id_val_scores`` holds one score list per stage, early stages first and
    the final stage last. Early gates get two-sided intervals trimming
    ``(1 - r_i)/2`` from each tail (order statistics, nearest-integer trim);
    the final gate gets a one-sided threshold at the residual retention
    ``final_tpr / prod(r_i)``, cutting the high tail for energy scores and
    the low tail for max-softmax scores. Measured retention on the
    calibration scores themselves lands within 1/N of each target.
    """
    stages = [np.asarray(s, dtype=np.float64) for s in id_val_scores]
    if score_kinds is None:
        if len(stages) < 1:
            raise CalibrationError("no stages to calibrate")
        score_kinds = ["ses", "she"][: len(stages) - 1] + ["final-energy"]
    score_kinds = list(score_kinds)
    if len(score_kinds) != len(stages):
        raise ConfigError(
            f"{len(stages)} score lists but {len(score_kinds)} score kinds"
        )
    if not score_kinds or not score_kinds[-1].startswith("final-"):
        raise ConfigError("the last score kind must be a final scorer")
    for kind in score_kinds[:-1]:
        if kind.startswith("final-"):
            raise ConfigError("final scorer may only appear last")
    if len(budget.early_retention) != len(stages) - 1:
        raise ConfigError(
            f"budget has {len(budget.early_retention)} early retentions "
            f"for {len(stages) - 1} early stages"
        )
    for i, s in enumerate(stages):
        if s.ndim != 1 or s.size < 50:
            raise CalibrationError(
                f"stage {i + 1} has {s.size} validation scores, need at least 50"
            )
        if not np.all(np.isfinite(s)):
            raise CalibrationError(f"stage {i + 1} validation scores contain non-finite values")

    gates = []
    for i, (kind, scores) in enumerate(zip(score_kinds, stages)):
        n = scores.size
        ordered = np.sort(scores)
        if kind.startswith("final-"):
            residual = budget.final_tpr / budget.product_retention
            m = _tail_count(n, 1.0 - residual)
            m = min(m, n - 1)
            if kind == "final-energy":
                lo, hi = -math.inf, float(ordered[n - 1 - m])
            else:
                lo, hi = float(ordered[m]), math.inf
            target = residual
        else:
            r = budget.early_retention[i]
            if r == 1.0:
                lo, hi = -math.inf, math.inf
            else:
                m = _tail_count(n, (1.0 - r) / 2.0)
                if 2 * m >= n:
                    raise CalibrationError(
                        f"stage {i + 1}: retention {r} trims all {n} scores"
                    )
                lo, hi = float(ordered[m]), float(ordered[n - 1 - m])
            target = r
        measured = float(np.mean((scores >= lo) & (scores <= hi)))
        gates.append(
            GateConfig(
                stage=i + 1,
                score_kind=kind,
                lo=lo,
                hi=hi,
                calibration={
                    "target_retention": float(target),
                    "measured_retention": measured,
                    "n_validation": int(n),
                },
            )
        )
    return gates


def gate_decision(score: float, gate: GateConfig) -> bool:
    """True when the score sits inside the closed acceptance interval.

    A NaN score never passes; the caller records it as a numeric anomaly.
    """
    if math.isnan(score):
        return False
    return gate.lo <= score <= gate.hi


def energy_score(logits) -> float:
    """Negative log-sum-exp of the logits (max-shifted).

    Lower means more in-distribution; adding a constant to every logit
    shifts the value by exactly its negation.
    """
    v = np.asarray(logits, dtype=np.float64).ravel()
    if v.size < 2:
        raise SizeError(f"need at least 2 logits, got {v.size}")
    return float(-logsumexp(v))


def msp_score(logits) -> float:
    """Maximum softmax probability, in ``(1/C, 1]``; shift-invariant."""
    v = np.asarray(logits, dtype=np.float64).ravel()
    if v.size < 2:
        raise SizeError(f"need at least 2 logits, got {v.size}")
    shifted = v - v.max()
    p = np.exp(shifted)
    return float(p.max() / p.sum())


@dataclass
class CascadeOutcome:
    """Per-sample record of one walk down the chain."""

    sample_id: str
    verdict: str                     # "accepted" | "rejected"
    exit_stage: object               # 1-based stage index, or "final"
    scores: dict                     # score_kind -> value, visited stages only
    flops: int
    label_pred: int | None = None    # argmax class, accepted samples only
    anomaly: bool = False            # a visited score was NaN

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "verdict": self.verdict,
            "exit_stage": self.exit_stage,
            "scores": {k: float(v) for k, v in self.scores.items()},
            "flops": int(self.flops),
            "label_pred": self.label_pred,
            "anomaly": self.anomaly,
        }


class _SampleFeatures:
    """Lazily materialize per-stage features for an image or manifest entry.

    Laziness is what makes the chain's short-circuit real: a stage that is
    never visited is never computed (or read from disk).
    """

    def __init__(self, sample, backbone: Backbone):
        self._backbone = backbone
        self._cache = {}
        if isinstance(sample, ManifestEntry):
            self._entry = sample
            self._image = None
        else:
            self._entry = None
            self._image = as_tensor(sample)

    def n_stages(self) -> int:
        if self._entry is not None:
            return len(self._entry.stage_paths)
        return self._backbone.n_stages

    def stage(self, i: int) -> np.ndarray:
        if i in self._cache:
            return self._cache[i]
        if self._entry is not None:
            if i >= len(self._entry.stage_paths):
                raise DataError(
                    f"sample {self._entry.sample_id}: no stage-{i + 1} features in manifest"
                )
            z = read_tensor(self._entry.stage_paths[i])
        else:
            prev = self._image if i == 0 else self.stage(i - 1)
            z = forward_stage(self._backbone, i, prev)
        self._cache[i] = z
        return z

    def logits(self) -> np.ndarray:
        if self._entry is not None:
            if not self._entry.logits_path:
                raise DataError(
                    f"sample {self._entry.sample_id}: manifest entry has no logits"
                )
            return read_tensor(self._entry.logits_path)
        return head_logits(self._backbone, self.stage(self._backbone.n_stages - 1))


def _pooled(z: np.ndarray) -> np.ndarray:
    return global_average_pool(z) if z.ndim == 3 else z


def run_cascade(
    sample,
    backbone: Backbone,
    bank: PrototypeBank | None,
    gates,
    *,
    ses_cfg: SesConfig | None = None,
    ses_omega=None,
    l2_normalize: bool = True,
    sample_id: str = "",
) -> CascadeOutcome:
    """Walk one sample down the chain and record the outcome.

    ``sample`` is either an image tensor (features come from the backbone)
    or a :class:`ManifestEntry` (features come from disk). Execution halts
    at the first rejecting gate; the FLOPs field sums the ledger entries of
    the visited stages plus the visited gate overheads. Accepted samples
    carry the argmax-logit prediction.
    """
    ordered = sorted(gates, key=lambda g: (g.stage, g.is_final))
    if not ordered or not ordered[-1].is_final:
        raise ConfigError("cascade needs a final gate as its last stage")
    if any(g.is_final for g in ordered[:-1]):
        raise ConfigError("only the last gate may be a final scorer")
    final_gate = ordered[-1]
    feats = _SampleFeatures(sample, backbone)

    flops = 0
    paid = 0  # conv stages already charged
    scores = {}
    anomaly = False

    def outcome(verdict, exit_stage, label_pred=None):
        return CascadeOutcome(
            sample_id=sample_id,
            verdict=verdict,
            exit_stage=exit_stage,
            scores=scores,
            flops=flops,
            label_pred=label_pred,
            anomaly=anomaly,
        )

    for gate in ordered[:-1]:
        if gate.stage > feats.n_stages():
            raise DataError(
                f"gate at stage {gate.stage} but only {feats.n_stages()} stages available"
            )
        while paid < gate.stage:
            flops += backbone.flops_ledger[paid]
            paid += 1
        z = feats.stage(gate.stage - 1)
        if gate.score_kind == "ses":
            cfg = ses_cfg if ses_cfg is not None else SesConfig.for_channels(z.shape[0])
            value = ses_score(z, cfg, omega=ses_omega)
        elif gate.score_kind == "she":
            if bank is None:
                raise ConfigError("cascade has an she gate but no prototype bank")
            value = she_energy(_pooled(z), bank, l2_normalize=l2_normalize)
        else:  # pragma: no cover - kinds are validated at construction
            raise ConfigError(f"unknown early score kind {gate.score_kind!r}")
        flops += gate_overhead_flops(backbone, gate.stage - 1, gate.score_kind)
        scores[gate.score_kind] = value
        if math.isnan(value):
            anomaly = True
        if not gate_decision(value, gate):
            return outcome("rejected", gate.stage)

    while paid < backbone.n_stages:
        flops += backbone.flops_ledger[paid]
        paid += 1
    flops += backbone.flops_ledger[backbone.n_stages]  # linear head
    logits = feats.logits()
    if final_gate.score_kind == "final-energy":
        value = energy_score(logits)
    else:
        value = msp_score(logits)
    scores[final_gate.score_kind] = value
    if math.isnan(value):
        anomaly = True
    if not gate_decision(value, final_gate):
        return outcome("rejected", FINAL_STAGE)
    return outcome("accepted", FINAL_STAGE, label_pred=int(np.argmax(logits)))


def expected_flops(outcomes, backbone: Backbone, gates=None) -> dict:
    """Average per-sample cost against the full-path cost.

    ``full_flops`` is the whole ledger plus every gate overhead (the
    rejection modules are not free), so ``savings_pct`` can go negative
    when nothing exits early. With ``gates`` omitted, the default
    attachment (ses on the first stage, she on the second) prices the
    overheads.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise DataError("expected_flops needs at least one outcome")
    avg = float(np.mean([o.flops for o in outcomes]))
    full = int(sum(backbone.flops_ledger))
    if gates is None:
        overhead_plan = [(1, "ses")] + ([(2, "she")] if backbone.n_stages >= 2 else [])
    else:
        overhead_plan = [(g.stage, g.score_kind) for g in gates if not g.is_final]
    for stage, kind in overhead_plan:
        full += gate_overhead_flops(backbone, stage - 1, kind)
    return {
        "avg_flops": avg,
        "full_flops": full,
        "savings_pct": 100.0 * (1.0 - avg / full),
    }


def _format_bound(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def _parse_bound(s: str) -> float:
    return float(s)


def save_gates(gates, path, extra: dict | None = None) -> None:
    """Persist a gate set as JSON; bounds go out as decimal strings or
    ``"inf"``/``"-inf"`` so they round-trip exactly."""
    doc = {
        "gates": [
            {
                "stage": g.stage,
                "score_kind": g.score_kind,
                "lo": _format_bound(g.lo),
                "hi": _format_bound(g.hi),
                "calibration": g.calibration,
            }
            for g in gates
        ]
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_gates(path):
    """Load a gate set; returns ``(gates, extras)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"gates file {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or "gates" not in doc:
        raise DataError(f"gates file {path} missing the 'gates' array")
    gates = []
    for rec in doc["gates"]:
        try:
            gates.append(
                GateConfig(
                    stage=int(rec["stage"]),
                    score_kind=str(rec["score_kind"]),
                    lo=_parse_bound(rec["lo"]),
                    hi=_parse_bound(rec["hi"]),
                    calibration=rec.get("calibration", {}),
                )
            )
        except (KeyError, ValueError) as e:
            raise DataError(f"malformed gate record {rec!r}: {e}") from e
    extras = {k: v for k, v in doc.items() if k != "gates"}
    return gates, extras
