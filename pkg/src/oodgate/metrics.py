"""Detection metrics and report output.

Scores follow one convention here: higher means more in-distribution.
``ScoreSet.from_raw`` applies the per-kind sign fix exactly once (energies
flip sign, probabilities pass through); interval-gated stage scores reduce
to a scalar through the distance-to-interval margin, and a whole cascade
run reduces to the worst margin over the gates it visited.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .cascade import CascadeOutcome, GateConfig
from .errors import DataError, ValidationError

# Raw kinds where larger values mean more out-of-distribution.
_NEGATE_KINDS = ("final-energy", "she", "energy")


@dataclass(frozen=True)
class ScoreSet:
    """Finite, oriented score samples for the two populations."""

    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.id_scores, dtype=np.float64).ravel()
        oods = np.asarray(self.ood_scores, dtype=np.float64).ravel()
        if ids.size == 0 or oods.size == 0:
            raise DataError("both score populations must be non-empty")
        if not (np.all(np.isfinite(ids)) and np.all(np.isfinite(oods))):
            raise ValidationError("scores must be finite")
        object.__setattr__(self, "id_scores", ids)
        object.__setattr__(self, "ood_scores", oods)

    @classmethod
    def from_raw(cls, kind: str, id_scores, ood_scores) -> "ScoreSet":
        """Orient raw scores of the given kind so higher means more ID."""
        sign = -1.0 if kind in _NEGATE_KINDS else 1.0
        return cls(
            sign * np.asarray(id_scores, dtype=np.float64),
            sign * np.asarray(ood_scores, dtype=np.float64),
        )


def auroc(s: ScoreSet) -> float:
    """Probability a random ID score beats a random OOD score, ties at half.

    Mann-Whitney rank formulation with midranks; identical to trapezoidal
    ROC integration and to the exhaustive pairwise count.
    """
    ids, oods = s.id_scores, s.ood_scores
    combined = np.concatenate([ids, oods])
    ranks = rankdata(combined, method="average")
    rank_sum = ranks[: ids.size].sum()
    u = rank_sum - ids.size * (ids.size + 1) / 2.0
    return float(u / (ids.size * oods.size))


def fpr_at_tpr(s: ScoreSet, tpr: float = 0.95) -> float:
    """Fraction of OOD scores above the threshold retaining ``tpr`` of ID.

    The threshold is the largest value keeping at least the requested
    fraction of ID scores at or above it; ``tpr=1`` degenerates to the
    minimum ID score and ``tpr=0`` to an infinite threshold.
    """
    if not 0.0 <= tpr <= 1.0:
        raise ValidationError(f"tpr must be in [0, 1], got {tpr}")
    ids = np.sort(s.id_scores)
    n = ids.size
    keep = int(math.ceil(tpr * n))
    if keep == 0:
        return 0.0
    threshold = ids[n - keep]
    return float(np.mean(s.ood_scores >= threshold))


def gate_margin(scores, gate: GateConfig) -> np.ndarray:
    """Distance-to-interval reduction ``-max(lo - s, s - hi, 0)``.

    Zero inside the acceptance region, increasingly negative outside, so the
    usual higher-is-more-ID convention holds for interval gates.
    """
    s = np.asarray(scores, dtype=np.float64)
    below = np.where(np.isinf(gate.lo), -np.inf, gate.lo - s)
    above = np.where(np.isinf(gate.hi), -np.inf, s - gate.hi)
    return -np.maximum(np.maximum(below, above), 0.0)


def cascade_margin(outcome: CascadeOutcome, gates) -> float:
    """Worst gate margin over the stages one sample visited.

    Accepted samples sit at zero; rejected samples carry the (negative)
    violation distance of the gate that stopped them.
    """
    worst = 0.0
    by_kind = {g.score_kind: g for g in gates}
    for kind, value in outcome.scores.items():
        gate = by_kind.get(kind)
        if gate is None:
            continue
        if math.isnan(value):
            return -math.inf
        worst = min(worst, float(gate_margin(value, gate)))
    return worst


def cascade_score_set(id_outcomes, ood_outcomes, gates) -> ScoreSet:
    """Margin-reduced scores for two outcome populations."""
    return ScoreSet(
        np.array([cascade_margin(o, gates) for o in id_outcomes]),
        np.array([cascade_margin(o, gates) for o in ood_outcomes]),
    )


@dataclass(frozen=True)
class ExitBin:
    reject_count: int
    pass_count: int
    fraction: float


def exit_histogram(outcomes, n_early_stages: int | None = None) -> dict:
    """Where samples left the chain.

    Keys ``stage_1 .. stage_{K-1}`` count early rejections; ``final_rejected``
    and ``final_accepted`` split the survivors. Fractions partition one.
    A stage's ``pass_count`` is the number of samples that cleared its gate.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise DataError("exit_histogram needs at least one outcome")
    n = len(outcomes)
    if n_early_stages is None:
        n_early_stages = max(_max_early_stage(o) for o in outcomes)
    hist = {}
    for stage in range(1, n_early_stages + 1):
        rejected = sum(
            1 for o in outcomes if o.exit_stage == stage and o.verdict == "rejected"
        )
        passed = sum(
            1
            for o in outcomes
            if o.exit_stage == "final" or (isinstance(o.exit_stage, int) and o.exit_stage > stage)
        )
        hist[f"stage_{stage}"] = ExitBin(rejected, passed, rejected / n)
    final_rejected = sum(1 for o in outcomes if o.exit_stage == "final" and o.verdict == "rejected")
    final_accepted = sum(1 for o in outcomes if o.verdict == "accepted")
    hist["final_rejected"] = ExitBin(final_rejected, final_accepted, final_rejected / n)
    hist["final_accepted"] = ExitBin(0, final_accepted, final_accepted / n)
    return hist


def _max_early_stage(outcome: CascadeOutcome) -> int:
    early = [k for k in outcome.scores if not k.startswith("final-")]
    return len(early)


REPORT_COLUMNS = (
    "dataset",
    "score_kind",
    "auroc",
    "fpr95",
    "avg_flops",
    "savings_pct",
    "exit_frac_stage1",
    "exit_frac_stage2",
    "exit_frac_final_rejected",
    "exit_frac_final_accepted",
)


def format_report_value(value) -> str:
    if isinstance(value, str):
        return value
    return f"{float(value):.6f}"


def write_report_csv(rows, path) -> None:
    """Write report rows (dicts keyed by :data:`REPORT_COLUMNS`) as CSV.

    Formatting is fixed so equal inputs produce byte-identical files.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([format_report_value(row[col]) for col in REPORT_COLUMNS])


def write_histogram_csv(hist, path) -> None:
    """Write one exit histogram as CSV (bin, reject_count, pass_count, fraction)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("bin", "reject_count", "pass_count", "fraction"))
        for name, b in hist.items():
            writer.writerow((name, b.reject_count, b.pass_count, f"{b.fraction:.6f}"))
