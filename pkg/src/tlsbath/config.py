"""Run configuration: a validated, fully-defaulted description of one CLI run.

Configs are YAML (or JSON) mappings. Unknown keys are rejected everywhere so that a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import experiments as ex
from .model import ENVELOPES, SQUARE

EXECUTION_KEYS = ("workers", "out")
COMMANDS = ("simulate", "sweep", "floquet", "perturb", "synth", "analyze", "density")


class ConfigError(ValueError):
    """Schema violation, unknown recipe or unreadable config."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LinearGridConfig(_Strict):
    start: float
    stop: float
    n: int = Field(ex.DEFAULT_GRID_POINTS, ge=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.n > 1 and not self.stop > self.start:
            raise ValueError("stop must exceed start")
        return self

    def to_grid(self) -> ex.Grid:
        return ex.Grid.linear(self.start, self.stop, self.n)


GridField = Union[LinearGridConfig, list[float]]


def _grid(g: GridField) -> ex.Grid:
    return g.to_grid() if isinstance(g, LinearGridConfig) else ex.Grid.explicit(g)


class EnsembleModel(_Strict):
    frequencies: list[float] = Field(min_length=1)
    coupling: Union[float, list[list[float]]] = 0.0
    gamma: float = Field(0.002, ge=0.0)
    dipole_scales: Optional[list[float]] = None


class PulseModel(_Strict):
    amplitude: float = Field(ge=0.0)
    carrier_freq: float = Field(gt=0.0)
    duration: float = Field(gt=0.0)
    start: float = Field(0.0, ge=0.0)
    phase: float = 0.0
    envelope: str = SQUARE
    ramp_fraction: float = Field(0.05, ge=0.0, le=0.5)

    @field_validator("envelope")
    @classmethod
    def _env(cls, v):
        if v not in ENVELOPES:
            raise ValueError(f"envelope must be one of {ENVELOPES}")
        return v


class ProtocolModel(_Strict):
    pulses: list[PulseModel] = Field(min_length=1)
    t_end: float = Field(gt=0.0)
    sample_step: float = Field(0.25, gt=0.0)


class SolverModel(_Strict):
    rtol: float = Field(ex.DEFAULT_RTOL, gt=0.0)
    atol: float = Field(ex.DEFAULT_ATOL, gt=0.0)
    free_evolution: Literal["exact", "rk"] = "exact"


class SignalModel(_Strict):
    """Signal-chain overrides; ``None`` keeps the recipe's own choice."""

    window: Optional[Literal["rect", "hann"]] = None
    zero_pad_factor: Optional[int] = Field(None, ge=1)
    threshold: Optional[float] = Field(None, gt=0.0)
    threshold_mode: Optional[Literal["median", "absolute"]] = None
    min_separation: Optional[float] = Field(None, gt=0.0)
    lowpass_cutoff: Optional[float] = Field(None, gt=0.0)
    dc_bin_tolerance: Optional[float] = Field(None, ge=0.0)


class FloquetModel(_Strict):
    drive_freqs: GridField = LinearGridConfig(start=3.0, stop=5.0, n=21)
    amplitude: float = Field(0.1, ge=0.0)
    harmonic_cutoff: int = Field(15, ge=1)


class PerturbModel(_Strict):
    omega1: float = 3.0
    omega2: float = 4.0
    drive_amp: float = Field(0.001, ge=0.0)
    coupling: float = 0.005
    drive_freqs: GridField = LinearGridConfig(start=2.5, stop=4.5, n=201)
    t_max: float = Field(200.0, gt=0.0)
    dt: float = Field(0.25, gt=0.0)


class EmitterModel(_Strict):
    weight_re: float = 1.0
    weight_im: float = 0.0
    freq: float
    decay: float = Field(0.0, ge=0.0)
    onset: float = 0.0


class SynthModel(_Strict):
    emitters: list[EmitterModel] = Field(min_length=1)
    lo_freq: float = Field(gt=0.0)
    lo_phase: float = 0.0
    dt: float = Field(0.25, gt=0.0)
    n_samples: int = Field(1600, ge=2)


class AnalyzeModel(_Strict):
    input: str
    lo_freq: float = Field(gt=0.0)
    lo_phase: float = 0.0
    column: Optional[str] = None


class DensityModel(_Strict):
    n_emitters: int = Field(42, ge=1)
    span: tuple[float, float] = (4.1, 4.6)
    durations: list[float] = [100.0, 150.0, 200.0, 250.0, 300.0]
    record: float = Field(400.0, gt=0.0)
    dt: float = Field(0.1, gt=0.0)
    noise: float = Field(0.0, ge=0.0)
    jitter: float = Field(0.002, ge=0.0)
    decay: float = Field(0.001, ge=0.0)
    drive_freqs: Optional[GridField] = None


class RunConfig(_Strict):
    command: Literal["simulate", "sweep", "floquet", "perturb", "synth", "analyze", "density"] = "sweep"
    recipe: Optional[str] = None
    ensemble: Optional[EnsembleModel] = None
    protocol: Optional[ProtocolModel] = None
    solver: SolverModel = SolverModel()
    signal: SignalModel = SignalModel()
    floquet: FloquetModel = FloquetModel()
    perturb: PerturbModel = PerturbModel()
    synth: Optional[SynthModel] = None
    analyze: Optional[AnalyzeModel] = None
    density: DensityModel = DensityModel()
    seed: int = 0
    workers: int = Field(1, ge=1)
    out: str = "out"
    grid_scale: float = Field(1.0, gt=0.0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.command == "sweep":
            if self.recipe is None:
                raise ValueError("sweep needs a recipe name")
            if self.recipe not in ex.RECIPES:
                raise ValueError(f"unknown recipe {self.recipe!r}; known: {', '.join(sorted(ex.RECIPES))}")
        if self.command == "simulate" and (self.ensemble is None or self.protocol is None):
            raise ValueError("simulate needs 'ensemble' and 'protocol'")
        if self.command == "synth" and self.synth is None:
            raise ValueError("synth needs a 'synth' section")
        if self.command == "analyze" and self.analyze is None:
            raise ValueError("analyze needs an 'analyze' section")
        return self

    def resolved(self, include_execution: bool = True) -> dict:
        """Fully-defaulted config; ``include_execution=False`` drops the settings that
        cannot change results (worker budget, output directory)."""
        d = self.model_dump(mode="json")
        if not include_execution:
            for k in EXECUTION_KEYS:
                d.pop(k, None)
        return d

    def config_hash(self) -> str:
        """sha256 of the resolved config minus execution-only settings."""
        d = self.resolved(include_execution=False)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(source: Union[str, Path, dict, None] = None, **overrides) -> RunConfig:
    """Validate a config given as a path, YAML text or mapping; ``overrides`` win."""
    if source is None:
        data: dict = {}
    elif isinstance(source, dict):
        data = dict(source)
    else:
        text = None
        if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                         and Path(source).suffix in (".yaml", ".yml", ".json")):
            try:
                text = Path(source).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config {source}: {exc}") from exc
        else:
            text = str(source)
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping at the top level")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def dump_config(cfg: RunConfig, include_execution: bool = True) -> str:
    return yaml.safe_dump(cfg.resolved(include_execution), sort_keys=True, default_flow_style=False)


def apply_to_recipe(cfg: RunConfig, recipe: ex.SweepRecipe) -> ex.SweepRecipe:
    """Recipe with the config's seed, solver tolerances and signal overrides."""
    from dataclasses import replace

    sig = {k: v for k, v in cfg.signal.model_dump().items() if v is not None}
    return replace(
        recipe,
        seed=cfg.seed,
        rtol=cfg.solver.rtol,
        atol=cfg.solver.atol,
        analysis=replace(recipe.analysis, **sig),
    )


def density_recipe(cfg: RunConfig) -> ex.SweepRecipe:
    from dataclasses import replace

    base = ex.density()
    d = cfg.density
    extra = {"n_emitters": d.n_emitters, "span": tuple(d.span), "durations": tuple(d.durations),
             "record": d.record, "dt": d.dt, "noise": d.noise, "jitter": d.jitter, "decay": d.decay}
    grid = base.grid if d.drive_freqs is None else _grid(d.drive_freqs)
    return apply_to_recipe(cfg, replace(base, grid=grid, extra=extra))


def grid_values(g: GridField):
    return _grid(g).resolve()
