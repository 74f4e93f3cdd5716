"""Pipeline configuration.

A config file is JSON with up to four sections; missing keys take their
defaults and unknown keys are rejected.  Command-line flags are applied on
top of the file as dotted-key overrides (``segment.window_ms=2900``).
"""

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .preprocess import FilterSpec
from .segmentation import SegmentParams


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PreprocessConfig(_Section):
    target_rate_hz: float = 100.0
    cutoff_hz: float = 10.0
    filter_order: int = 2

    @model_validator(mode="after")
    def _check(self):
        if self.target_rate_hz <= 0:
            raise ValueError("target_rate_hz must be positive")
        if not 0 < self.cutoff_hz < self.target_rate_hz / 2:
            raise ValueError("cutoff_hz must lie strictly between 0 and half the target rate")
        if self.filter_order < 1:
            raise ValueError("filter_order must be at least 1")
        return self


class SegmentConfig(_Section):
    var_window_ms: float = 200.0
    stable_window_ms: float = 1000.0
    min_fluct_ms: float = 500.0
    window_ms: float = 3000.0
    delta_override: Optional[float] = None
    link_a: int = 0
    link_b: int = 1
    # subcarriers averaged in the variance stream; None means all of them
    subcarriers: Optional[tuple[int, ...]] = None

    @field_validator("var_window_ms", "stable_window_ms", "window_ms")
    @classmethod
    def _positive(cls, v):
        if v <= 0:
            raise ValueError("durations must be positive")
        return v

    @field_validator("min_fluct_ms")
    @classmethod
    def _non_negative(cls, v):
        if v < 0:
            raise ValueError("min_fluct_ms must be non-negative")
        return v


class FeatureConfig(_Section):
    channels: Literal["amplitude_and_phase", "amplitude_only"] = "amplitude_and_phase"
    n_subcarriers: int = 4

    @field_validator("n_subcarriers")
    @classmethod
    def _at_least_two(cls, v):
        if v < 2:
            raise ValueError("need at least 2 feature subcarriers")
        return v


class SvmConfig(_Section):
    nu: float = 0.1
    gamma: Optional[float] = None  # None means 1 / feature dimension
    grid_search: bool = False

    @field_validator("nu")
    @classmethod
    def _nu_range(cls, v):
        if not 0 < v <= 1:
            raise ValueError("nu must lie in (0, 1]")
        return v

    @field_validator("gamma")
    @classmethod
    def _gamma_positive(cls, v):
        if v is not None and v <= 0:
            raise ValueError("gamma must be positive")
        return v


class Config(_Section):
    preprocess: PreprocessConfig = PreprocessConfig()
    segment: SegmentConfig = SegmentConfig()
    features: FeatureConfig = FeatureConfig()
    svm: SvmConfig = SvmConfig()

    @property
    def filter_spec(self) -> FilterSpec:
        return FilterSpec(self.preprocess.cutoff_hz, self.preprocess.filter_order)

    @property
    def segment_params(self) -> SegmentParams:
        s = self.segment
        return SegmentParams(
            target_rate_hz=self.preprocess.target_rate_hz,
            cutoff_hz=self.preprocess.cutoff_hz,
            filter_order=self.preprocess.filter_order,
            var_window_ms=s.var_window_ms,
            stable_window_ms=s.stable_window_ms,
            min_fluct_ms=s.min_fluct_ms,
            window_ms=s.window_ms,
            link_a=s.link_a,
            link_b=s.link_b,
            subcarriers=s.subcarriers,
        )


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


def config_from_dict(d) -> Config:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return Config.model_validate(d)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def load_config(data: bytes | str | None) -> Config:
    if data is None:
        return Config()
    try:
        d = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config is not JSON: {exc}") from None
    return config_from_dict(d)


def merge(cfg: Config, overrides: dict) -> Config:
    """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
    d = cfg.model_dump()
    for key, value in overrides.items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        if section not in d or not name:
            raise ConfigError(f"unknown config key {key!r}")
        d[section][name] = value
    return config_from_dict(d)
