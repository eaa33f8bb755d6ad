"""Pipeline configuration shared by the estimation modules and the CLI.

A single dataclass carries learner libraries, fold counts, propensity
handling, seeds, and inference settings. JSON configs overlay the
defaults and command-line flags overlay the JSON; unknown JSON keys are
rejected so typos cannot silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from scipy.stats import norm

# Phi^{-1}(0.975) to the precision used for all reported 95% intervals.
Z_975 = 1.959964

DEFAULT_LIBRARY = ("mean", "glm", "univariate", "step_aic")


@dataclass(frozen=True)
class PipelineConfig:
    outcome_library: tuple[str, ...] = DEFAULT_LIBRARY
    blip_library: tuple[str, ...] = DEFAULT_LIBRARY
    folds: int = 10
    g_known: float | None = None
    g_estimate: bool | None = None  # None: estimate exactly when g_known is absent
    g_min: float = 0.01
    seed: int = 0
    shared_blip: bool = False  # True: one full-data blip fit reused across CV folds
    ci_level: float = 0.95
    epsilon_den: float = 1e-4  # ICER denominator instability guard (scaled outcome)
    effect_units: str = "pp"  # "pp" or "probability" for binary-outcome ICER denominators
    bootstrap_replicates: int = 1000
    bootstrap_mode: str = "refit"  # or "fixed-rule"
    threads: int = 1

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not self.outcome_library or not self.blip_library:
            raise ValueError("learner libraries must be non-empty")
        if self.g_known is not None and not (0.0 < self.g_known < 1.0):
            raise ValueError("g_known must be in (0, 1)")
        if not (0.0 < self.g_min < 0.5):
            raise ValueError("g_min must be in (0, 0.5)")
        if not (0.0 < self.ci_level < 1.0):
            raise ValueError("ci_level must be in (0, 1)")
        if self.effect_units not in ("pp", "probability"):
            raise ValueError("effect_units must be 'pp' or 'probability'")
        if self.bootstrap_mode not in ("refit", "fixed-rule"):
            raise ValueError("bootstrap_mode must be 'refit' or 'fixed-rule'")
        if self.bootstrap_replicates < 1:
            raise ValueError("bootstrap_replicates must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def estimate_propensity(self) -> bool:
        if self.g_estimate is None:
            return self.g_known is None
        return self.g_estimate

    @property
    def z_value(self) -> float:
        if self.ci_level == 0.95:
            return Z_975
        return float(norm.ppf(0.5 + self.ci_level / 2.0))

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["outcome_library"] = list(self.outcome_library)
        d["blip_library"] = list(self.blip_library)
        return d

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - cls.field_names()
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("outcome_library", "blip_library"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def config_hash(d: dict) -> str:
    """Stable sha256 of a JSON-serializable config mapping."""
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
