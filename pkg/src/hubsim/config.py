"""Run configuration: every tunable knob in one tree, loadable from YAML."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .demand import DemandConfig, UnloadingModel
from .objective import ObjectiveConfig
from .sfm.params import SfmParams


@dataclass(frozen=True)
class CorrectionConfig:
    """Proposal knobs of the Markov chain.

    ``amplitude`` caps the change of any LCM weight per iteration;
    ``bias_strength`` mixes residual-directed (1) and blind (0) proposals.
    Residuals smaller than ``residual_scale`` agents shrink the step, down to
    ``min_step_fraction`` of the amplitude. The scenario-mode knobs bound
    departure-time shifts and agent additions/removals per iteration.
    """

    amplitude: float = 0.05
    bias_strength: float = 0.8
    residual_scale: float = 10.0
    min_step_fraction: float = 0.1
    max_shift: float = 30.0
    shift_margin: float = 5.0
    batch_size: int = 5

    def __post_init__(self):
        if not (0 < self.amplitude <= 1):
            raise ValueError(f"amplitude must lie in (0, 1], got {self.amplitude}")
        if not (0 <= self.bias_strength <= 1):
            raise ValueError(f"bias_strength must lie in [0, 1], got {self.bias_strength}")
        if not (0 < self.min_step_fraction <= 1):
            raise ValueError("min_step_fraction must lie in (0, 1]")
        if self.max_shift <= 0 or self.batch_size < 1:
            raise ValueError("max_shift must be positive and batch_size >= 1")


@dataclass(frozen=True)
class AnnealSchedule:
    t0: float = 2.0
    gamma: float = 0.99
    max_iter: int = 500
    seed: int = 0
    patience: int = 100

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError(f"t0 must be positive, got {self.t0}")
        if not (0 < self.gamma < 1):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.max_iter < 0 or self.patience < 1:
            raise ValueError("max_iter must be >= 0 and patience >= 1")

    def temperature(self, k: int) -> float:
        return self.t0 * self.gamma ** k


@dataclass(frozen=True)
class RunConfig:
    sfm: SfmParams = field(default_factory=SfmParams)
    demand: DemandConfig = field(default_factory=DemandConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["demand"]["unloading"]["stair_capacity"] = dict(self.demand.unloading.stair_capacity)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            sub = dict(d[f.name] or {})
            if f.name == "demand" and "unloading" in sub:
                sub["unloading"] = UnloadingModel(**sub["unloading"])
            kw[f.name] = _build(f.default_factory, sub, f.name)
        return cls(**kw)

    def with_overrides(self, **sections: Mapping[str, Any]) -> "RunConfig":
        out = self
        for name, values in sections.items():
            values = {k: v for k, v in values.items() if v is not None}
            if values:
                out = replace(out, **{name: replace(getattr(out, name), **values)})
        return out


def _build(factory, values: dict, section: str):
    cls = factory if isinstance(factory, type) else type(factory())
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown keys in config section {section}: {sorted(unknown)}")
    return cls(**values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return RunConfig.from_dict(doc)
