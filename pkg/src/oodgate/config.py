"""Run configuration: every knob of the pipeline in one validated record.

A RunConfig is serialized into every artifact the pipeline writes (gates,
reports), so two runs with equal configs are byte-identical and any output
can be traced back to the exact settings that produced it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError

FINAL_SCORERS = ("energy", "msp")
WEIGHTINGS = ("uniform", "self-consistent")
KAPPA_MODES = ("vmf", "uniform")

DEFAULT_BACKBONE_SEED = 7
DEFAULT_SPLIT_SEED = 1309


@dataclass(frozen=True)
class RunConfig:
    # backbone
    backbone_seed: int = DEFAULT_BACKBONE_SEED
    classes: int = 4
    input_extents: tuple = (3, 32, 32)
    # spectral sieve
    ses_top_k: int | None = None  # None -> max(1, ceil(0.1 * C)) of the attached stage
    ses_epsilon: float = 1e-6
    ses_global_omega: bool = False
    ses_stage: int = 1
    # hyperspherical energy
    she_weighting: str = "uniform"
    she_kappa_mode: str = "vmf"
    she_l2_normalize: bool = True
    she_stage: int = 2
    # calibration budget
    early_retention: tuple = (0.995, 0.995)
    final_tpr: float = 0.95
    # final scorer
    final_scorer: str = "energy"
    # calibration split
    split_fraction: float = 0.9
    split_seed: int = DEFAULT_SPLIT_SEED
    # execution
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "input_extents", tuple(int(x) for x in self.input_extents))
        object.__setattr__(self, "early_retention", tuple(float(r) for r in self.early_retention))
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if len(self.input_extents) != 3 or any(x < 1 for x in self.input_extents):
            raise ConfigError(f"input_extents must be three positive values, got {self.input_extents}")
        if self.ses_top_k is not None and self.ses_top_k < 1:
            raise ConfigError(f"ses_top_k must be >= 1, got {self.ses_top_k}")
        if not self.ses_epsilon > 0:
            raise ConfigError(f"ses_epsilon must be positive, got {self.ses_epsilon}")
        if self.final_scorer not in FINAL_SCORERS:
            raise ConfigError(f"final_scorer must be one of {FINAL_SCORERS}, got {self.final_scorer!r}")
        if self.she_weighting not in WEIGHTINGS:
            raise ConfigError(f"she_weighting must be one of {WEIGHTINGS}, got {self.she_weighting!r}")
        if self.she_kappa_mode not in KAPPA_MODES:
            raise ConfigError(f"she_kappa_mode must be one of {KAPPA_MODES}, got {self.she_kappa_mode!r}")
        if not (0 < self.ses_stage < self.she_stage):
            raise ConfigError(
                f"need 0 < ses_stage < she_stage, got {self.ses_stage}, {self.she_stage}"
            )
        for r in self.early_retention:
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"retention targets must be in (0, 1], got {r}")
        if not 0.0 < self.final_tpr < 1.0:
            raise ConfigError(f"final_tpr must be in (0, 1), got {self.final_tpr}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")

    @property
    def final_score_kind(self) -> str:
        return f"final-{self.final_scorer}"

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["input_extents"] = list(self.input_extents)
        doc["early_retention"] = list(self.early_retention)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(doc)

    def override(self, **kwargs) -> "RunConfig":
        """New config with the given fields replaced (None values ignored)."""
        changes = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **changes) if changes else self
