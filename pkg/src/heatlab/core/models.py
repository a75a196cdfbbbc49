from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from heatlab.core.bounds import THEOREMS, ProbePolicy
from heatlab.core.discretize import Grid, build_grid
from heatlab.core.errors import ConfigError, HeatlabError
from heatlab.core.inequalities import InequalityCase
from heatlab.core.polygeom import SubharmonicPolynomial
from heatlab.core.semigroup import DerivativeSpec, SliceKind

Point = tuple[float, float]


def as_complex(point: Point) -> complex:
    return complex(point[0], point[1])


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridConfig(_Block):
    L: float = Field(gt=0)
    n: int = Field(ge=8)

    def build(self) -> Grid:
        return build_grid(self.L, self.n)


class EngineConfig(_Block):
    tol: float = Field(default=1e-10, gt=0, lt=1e-2)
    dense_limit: int | None = Field(default=None, ge=64)
    szego_degree: int | None = Field(default=None, ge=0)


class ProbeConfig(_Block):
    bases: list[Point] = Field(default_factory=lambda: [(0.0, 0.0)])
    rays: int = Field(default=3, ge=1)
    s_count: int = Field(default=16, ge=4)
    s_min_factor: float = Field(default=4.0, gt=0)
    s_max: float | None = Field(default=None, gt=0)
    distances: int = Field(default=8, ge=2)
    lambdas: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0, 8.0])
    edge_nodes: int = Field(default=4, ge=0)

    def policy(self) -> ProbePolicy:
        return ProbePolicy(
            bases=tuple(as_complex(b) for b in self.bases),
            rays=self.rays,
            s_count=self.s_count,
            s_min_factor=self.s_min_factor,
            s_max=self.s_max,
            distances=self.distances,
            lambdas=tuple(self.lambdas),
            edge_nodes=self.edge_nodes,
        )


class DerivativeConfig(_Block):
    z_word: list[str] = Field(default_factory=list)
    w_word: list[str] = Field(default_factory=list)
    s_order: int = Field(default=0, ge=0, le=2)

    @model_validator(mode="after")
    def _letters(self) -> "DerivativeConfig":
        self.spec()
        return self

    def spec(self) -> DerivativeSpec:
        try:
            return DerivativeSpec(z_word=tuple(self.z_word), w_word=tuple(self.w_word), s_order=self.s_order)
        except HeatlabError as exc:
            raise ValueError(str(exc)) from exc


class GeometryConfig(_Block):
    points: list[Point] = Field(default_factory=lambda: [(0.0, 0.0), (1.0, 0.0), (0.5, 1.5)])
    deltas: list[float] = Field(default_factory=lambda: [0.01, 0.1, 1.0, 10.0])
    intuition_m: list[int] = Field(default_factory=lambda: [2, 3])
    ratio_pairs: int = Field(default=200, ge=20)


class AssembleConfig(_Block):
    dump: bool = True
    residual_trials: int = Field(default=8, ge=1)


class KernelConfig(_Block):
    kinds: list[SliceKind] = Field(default_factory=lambda: [SliceKind.HTILDE, SliceKind.SZEGO])
    s_values: list[float] = Field(default_factory=lambda: [0.1, 0.5, 2.0])
    lambdas: list[float] = Field(default_factory=lambda: [1.0])
    sources: list[Point] = Field(default_factory=lambda: [(0.0, 0.0)])
    derivatives: list[DerivativeConfig] = Field(default_factory=list)

    @field_validator("s_values", "lambdas")
    @classmethod
    def _positive(cls, values: list[float]) -> list[float]:
        if any(v <= 0 for v in values):
            raise ValueError("heat times and spectral parameters must be positive")
        return values


class WaveConfig(_Block):
    horizon: float = Field(default=2.0, gt=0)
    dt: float | None = Field(default=None, gt=0)
    stride: int = Field(default=4, ge=1)
    cone_center: Point = (0.0, 0.0)
    cone_radius: float = Field(default=2.5, gt=0)
    subordination_s: float = Field(default=0.3, gt=0)
    subordination_probes: int = Field(default=5, ge=1)
    tail_ells: list[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    tail_lambdas: list[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0])
    tail_orders: list[int] = Field(default_factory=lambda: [1, 2, 4])


class VerifyConfig(_Block):
    theorems: list[str] = Field(default_factory=lambda: ["heat_tilde", "relative_heat", "szego", "off_diagonal"])
    derivatives: list[DerivativeConfig] = Field(default_factory=lambda: [DerivativeConfig()])
    inequalities: list[InequalityCase] = Field(default_factory=list)
    trials: int = Field(default=100, ge=1)
    intertwining: bool = True
    margins_csv: bool = False

    @field_validator("theorems")
    @classmethod
    def _known(cls, names: list[str]) -> list[str]:
        unknown = [n for n in names if n not in THEOREMS]
        if unknown:
            raise ValueError(f"unknown theorem(s) {unknown}; known: {list(THEOREMS)}")
        return names


class ExperimentConfig(_Block):
    """One experiment document; the subcommand picks the blocks it needs."""

    polynomial: dict[str, Any]
    taus: list[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0], min_length=1)
    grid: GridConfig
    grids: list[GridConfig] = Field(default_factory=list)
    engine: EngineConfig = Field(default_factory=EngineConfig)
    probes: ProbeConfig = Field(default_factory=ProbeConfig)
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    assemble: AssembleConfig = Field(default_factory=AssembleConfig)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    wave: WaveConfig = Field(default_factory=WaveConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    out_dir: str | None = None
    seed: int = 0
    threads: int | None = Field(default=None, ge=1)
    plot: bool = False
    schema_version: Literal[1] = 1

    @model_validator(mode="after")
    def _polynomial(self) -> "ExperimentConfig":
        try:
            self.build_polynomial()
        except (HeatlabError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed polynomial literal: {exc}") from exc
        return self

    @property
    def domain_half_width(self) -> float:
        return max(g.L for g in self.all_grids())

    def build_polynomial(self) -> SubharmonicPolynomial:
        # subharmonicity is sampled over the widest grid of the run
        return SubharmonicPolynomial.from_literal(self.polynomial, validation_half_width=self.domain_half_width)

    def all_grids(self) -> list[GridConfig]:
        return [self.grid, *self.grids]


def parse_config(data: Any) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(data)


def config_schema() -> dict[str, Any]:
    return ExperimentConfig.model_json_schema()
