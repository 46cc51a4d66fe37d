"""Strict run configuration.

A run file is JSON. Unknown keys anywhere are rejected, scenario overrides
are checked against the preset's keyword arguments, and filter names must
be registered. ``effective()`` returns the fully populated dict, which
re-parses to the same config.
"""

import inspect
import json
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .experiment import ExperimentSpec, FilterSpec
from .filters import FILTER_NAMES, FilterConfig
from .flow import make_exponential_schedule
from .scenarios import PRESETS, make_scenario

SCHEMA_VERSION = 1

FilterName = Literal[FILTER_NAMES]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def preset_parameters(preset):
    return [p for p in inspect.signature(PRESETS[preset]).parameters]


class ScenarioConfig(_Strict):
    preset: Literal[tuple(PRESETS)]
    params: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _known_params(self):
        allowed = preset_parameters(self.preset)
        bad = sorted(set(self.params) - set(allowed))
        if bad:
            raise ValueError(f"unknown parameter(s) {bad} for preset {self.preset!r}; allowed: {allowed}")
        return self


class FilterEntry(_Strict):
    name: FilterName
    label: str = ""
    n_particles: int = Field(500, ge=1)
    resample_threshold: float = Field(0.5, gt=0.0, le=1.0)
    n_flow_steps: int = Field(29, ge=1)
    step_ratio: float = Field(1.2, gt=0.0)
    covariance_predictor: Literal["ekf", "ukf"] = "ekf"
    sigma_p: float = Field(0.0, ge=0.0)
    seed: int = 0

    @property
    def key(self):
        return self.label or self.name

    def filter_config(self):
        return FilterConfig(
            n_particles=self.n_particles,
            resample_threshold=self.resample_threshold,
            schedule=make_exponential_schedule(self.n_flow_steps, self.step_ratio),
            covariance_predictor=self.covariance_predictor,
            seed=self.seed,
            sigma_p=self.sigma_p,
        )


FILTER_FIELDS = tuple(f for f in FilterEntry.model_fields if f not in ("name", "label"))


class SweepConfig(_Strict):
    parameter: str
    values: list[float | int] = Field(min_length=1)


class RunConfig(_Strict):
    schema_version: Literal[SCHEMA_VERSION] = SCHEMA_VERSION
    scenario: ScenarioConfig
    filters: list[FilterEntry] = Field(min_length=1)
    trials: int = Field(10, ge=1)
    steps: int = Field(10, ge=1)
    seed: int = Field(0, ge=0)
    repeats: int = Field(1, ge=1)
    timing: bool = False
    workers: int | None = Field(None, ge=1)
    out: str | None = None
    sweep: SweepConfig | None = None

    @field_validator("filters")
    @classmethod
    def _unique_labels(cls, filters):
        keys = [f.key for f in filters]
        dup = sorted({k for k in keys if keys.count(k) > 1})
        if dup:
            raise ValueError(f"duplicate filter labels {dup}; set 'label' to tell them apart")
        return filters

    @model_validator(mode="after")
    def _sweep_target(self):
        if self.sweep is not None:
            p = self.sweep.parameter
            if p not in preset_parameters(self.scenario.preset) and p not in FILTER_FIELDS:
                raise ValueError(
                    f"sweep parameter {p!r} is neither a {self.scenario.preset!r} parameter "
                    f"nor a filter field {list(FILTER_FIELDS)}"
                )
        return self

    def effective(self):
        return self.model_dump(mode="json")

    def with_overrides(self, **changes):
        data = self.effective()
        data.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.model_validate(data)

    def at_sweep_value(self, value):
        """Copy of this config with the sweep parameter fixed and no sweep."""
        data = self.effective()
        data["sweep"] = None
        p = self.sweep.parameter
        if p in preset_parameters(self.scenario.preset):
            data["scenario"]["params"][p] = value
        else:
            for f in data["filters"]:
                f[p] = value
        return RunConfig.model_validate(data)

    def experiment_spec(self, workers=None):
        try:
            scenario = make_scenario(self.scenario.preset, **self.scenario.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario.params: {exc}") from exc
        filters = [FilterSpec(f.name, f.filter_config(), f.key) for f in self.filters]
        return ExperimentSpec(
            scenario, filters, n_trials=self.trials, n_steps=self.steps, base_seed=self.seed,
            n_repeats=self.repeats, timing=self.timing,
            workers=workers or self.workers or 1,
        )


def _format_errors(exc):
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "\n".join(lines)


def parse_config(data):
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return parse_config(data)
