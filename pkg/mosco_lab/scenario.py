"""Scenario files: TOML parsed into validated pydantic models."""

from __future__ import annotations

import copy
import itertools
import re
from collections.abc import Iterator
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy.spatial.distance import pdist, squareform

from mosco_lab.artifacts import read_distance_csv, read_vector_csv
from mosco_lab.config import tomllib
from mosco_lab.energy import EnergyBackend, EnergyConfig
from mosco_lab.errors import ConfigError, ParameterError, Suggestion
from mosco_lab.fields import BallKind, ScalarField
from mosco_lab.metric_core import (
    FamilyDirection,
    GridSpec,
    MetricMeasureSpace,
    MonotoneDistanceFamily,
    example_snowflake_alphas,
    geometric_snowflake_alphas,
    increasing_snowflake_alphas,
    riemannian_grid_family,
    snowflake_family,
)
from mosco_lab.tensors import identity_tensor, resolve_tensor


class Experiment(str, Enum):
    VALIDATE = "validate"
    ENERGY = "energy"
    APPROX = "approx"
    MOSCO_LIMINF = "mosco-liminf"
    MOSCO_RECOVERY = "mosco-recovery"
    HILBERTIANITY = "hilbertianity"
    SNOWFLAKE = "snowflake"


NEEDS_FAMILY = {
    Experiment.APPROX,
    Experiment.MOSCO_LIMINF,
    Experiment.MOSCO_RECOVERY,
    Experiment.HILBERTIANITY,
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CsvSpace(_Section):
    source: Literal["csv"]
    distances: str
    measure: str | None = None


class IntervalSpace(_Section):
    source: Literal["interval"]
    points: int = Field(ge=1)
    length: float = Field(default=1.0, gt=0)


class CloudSpace(_Section):
    source: Literal["cloud"]
    points: int = Field(ge=1)
    dim: int = Field(default=2, ge=1)
    normalize: bool = True


class GridSpace(_Section):
    source: Literal["grid"]
    dims: list[int] = Field(min_length=1)
    step: float = Field(default=1.0, gt=0)
    diagonal: bool = False
    centered: bool = True

    def spec(self) -> GridSpec:
        return GridSpec(tuple(self.dims), self.step, self.diagonal, self.centered)


SpaceSpec = Annotated[CsvSpace | IntervalSpace | CloudSpace | GridSpace, Field(discriminator="source")]


class SnowflakeFamilySpec(_Section):
    kind: Literal["snowflake"]
    schedule: Literal["example", "increasing", "geometric"] = "example"
    count: int = Field(default=4, ge=1)
    ratio: float = Field(default=0.1, gt=0, lt=1)
    alphas: list[float] | None = Field(default=None, min_length=1)
    limit_alpha: float | None = Field(default=None, gt=0, le=1)
    include_limit: bool | None = None


class RiemannianFamilySpec(_Section):
    kind: Literal["riemannian"]
    tensor: str = "heisenberg"
    params: dict[str, float] = Field(default_factory=dict)
    penalties: list[float] = Field(min_length=1)


class CsvFamilySpec(_Section):
    kind: Literal["csv"]
    levels: list[str] = Field(min_length=1)
    direction: FamilyDirection = FamilyDirection.INCREASING


FamilySpec = Annotated[
    SnowflakeFamilySpec | RiemannianFamilySpec | CsvFamilySpec, Field(discriminator="kind")
]


class EnergySpec(_Section):
    p: float = Field(default=2.0, gt=1)
    scale: float | None = Field(default=None, gt=0)
    kind: BallKind = BallKind.OPEN
    backend: EnergyBackend = EnergyBackend.SLOPE


class FunctionSpec(_Section):
    kind: Literal["distance", "coordinate", "constant", "random", "csv"] = "distance"
    center: int = Field(default=0, ge=0)
    clamp: float | None = Field(default=None, gt=0)
    axis: int = Field(default=0, ge=0)
    value: float = 1.0
    path: str | None = None


class ValidateOptions(_Section):
    continuity: bool = True
    continuity_max_points: int = Field(default=64, ge=1)


class ApproxOptions(_Section):
    eps: float = Field(default=0.05, gt=0)
    enforce_uniformity: bool = False


class LiminfOptions(_Section):
    sequence: Literal["constant", "bump"] = "constant"
    bump_point: int = Field(default=0, ge=0)


class RecoveryOptions(_Section):
    schedule: int = Field(default=4, ge=1)


class HilbertianityOptions(_Section):
    trials: int = Field(default=100, ge=1)


class SnowflakeOptions(_Section):
    radii: list[float] = Field(min_length=1)
    levels: list[int] = Field(default_factory=lambda: [2, 3, 4], min_length=1)

    @field_validator("radii")
    @classmethod
    def _positive(cls, radii: list[float]) -> list[float]:
        if any(r <= 0 for r in radii):
            raise ValueError("radii must be positive")
        return radii


class ExperimentOptions(_Section):
    validate_: ValidateOptions = Field(default_factory=ValidateOptions, alias="validate")
    approx: ApproxOptions = Field(default_factory=ApproxOptions)
    liminf: LiminfOptions = Field(default_factory=LiminfOptions)
    recovery: RecoveryOptions = Field(default_factory=RecoveryOptions)
    hilbertianity: HilbertianityOptions = Field(default_factory=HilbertianityOptions)
    snowflake: SnowflakeOptions | None = None

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class ScenarioConfig(_Section):
    experiment: Experiment
    seed: int = Field(default=0, ge=0, lt=2**64)
    out: str | None = None
    space: SpaceSpec
    family: FamilySpec | None = None
    energy: EnergySpec = Field(default_factory=EnergySpec)
    function: FunctionSpec = Field(default_factory=FunctionSpec)
    experiments: ExperimentOptions = Field(default_factory=ExperimentOptions)
    sweep: dict[str, list[Any]] = Field(default_factory=dict)

    def echo(self) -> dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)


_TOML_POSITION = re.compile(r"at line (\d+), column (\d+)")

_UNION_TAGS = {
    "space": {"csv", "interval", "cloud", "grid"},
    "family": {"snowflake", "riemannian", "csv"},
}


def _dotted(location: tuple[Any, ...]) -> str:
    # pydantic puts the discriminator tag right after the union field
    parts = [str(part) for part in location]
    if len(parts) > 1 and parts[1] in _UNION_TAGS.get(parts[0], set()):
        del parts[1]
    return ".".join(parts) or "<root>"


def parse_scenario(data: dict[str, Any], *, experiment: str | None = None) -> ScenarioConfig:
    """Validate a raw scenario table; ``experiment`` overrides the file's selector."""

    raw = copy.deepcopy(data)
    if experiment is not None:
        raw["experiment"] = experiment
    try:
        config = ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = _dotted(tuple(first["loc"]))
        raise ConfigError(
            f"Invalid scenario value at '{key}': {first['msg']}",
            field=key,
            details={"key": key, "errors": len(exc.errors())},
        ) from exc
    if config.experiment in NEEDS_FAMILY and config.family is None:
        raise ConfigError(
            f"Experiment '{config.experiment.value}' needs a [family] table.",
            field="family",
            details={"key": "family"},
            suggestion=Suggestion(
                action="add a family",
                fix="Declare [family] with kind = \"snowflake\", \"riemannian\" or \"csv\".",
            ),
        )
    if config.experiment is Experiment.SNOWFLAKE and config.experiments.snowflake is None:
        raise ConfigError(
            "Experiment 'snowflake' needs [experiments.snowflake] radii.",
            field="experiments.snowflake",
            details={"key": "experiments.snowflake"},
        )
    if isinstance(config.family, RiemannianFamilySpec) and not isinstance(config.space, GridSpace):
        raise ConfigError(
            "A riemannian family needs a grid space source.",
            field="space.source",
            details={"key": "space.source"},
        )
    for key, values in config.sweep.items():
        if not values:
            raise ConfigError(f"Sweep axis '{key}' is empty.", field=f"sweep.{key}", details={"key": f"sweep.{key}"})
    return config


def read_scenario_table(path: str | Path) -> dict[str, Any]:
    source = Path(path)
    try:
        with open(source, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"Scenario file not found: {source}", details={"path": str(source)}) from exc
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        column = getattr(exc, "colno", None)
        if line is None:
            found = _TOML_POSITION.search(str(exc))
            if found:
                line, column = int(found.group(1)), int(found.group(2))
        raise ConfigError(
            f"{source}: {exc}",
            details={"path": str(source), "line": line, "column": column},
        ) from exc


def load_scenario(path: str | Path, *, experiment: str | None = None) -> ScenarioConfig:
    return parse_scenario(read_scenario_table(path), experiment=experiment)


def _set_dotted(table: dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    cursor = table
    for part in parts[:-1]:
        child = cursor.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Sweep key '{key}' crosses a non-table value.", field=f"sweep.{key}")
        cursor = child
    cursor[parts[-1]] = value


def sweep_points(data: dict[str, Any]) -> Iterator[tuple[int, dict[str, Any], dict[str, Any]]]:
    """Yield (index, overrides, raw table) over the Cartesian product of the sweep grid."""

    grid = data.get("sweep") or {}
    if not isinstance(grid, dict):
        raise ConfigError("[sweep] must be a table of lists.", field="sweep")
    keys = list(grid)
    for key in keys:
        if not isinstance(grid[key], list) or not grid[key]:
            raise ConfigError(f"Sweep axis '{key}' is empty.", field=f"sweep.{key}", details={"key": f"sweep.{key}"})
    for index, combo in enumerate(itertools.product(*(grid[key] for key in keys))):
        overrides = dict(zip(keys, combo))
        raw = copy.deepcopy(data)
        raw.pop("sweep", None)
        for key, value in overrides.items():
            _set_dotted(raw, key, value)
        yield index, overrides, raw


def _resolve(base_dir: Path, name: str) -> Path:
    path = Path(name)
    return path if path.is_absolute() else base_dir / path


def build_space(config: ScenarioConfig, base_dir: Path) -> MetricMeasureSpace:
    spec = config.space
    if isinstance(spec, CsvSpace):
        dist = read_distance_csv(_resolve(base_dir, spec.distances))
        n = dist.shape[0]
        measure = (
            read_vector_csv(_resolve(base_dir, spec.measure), n)
            if spec.measure
            else np.full(n, 1.0 / n)
        )
        return MetricMeasureSpace(dist, measure)
    if isinstance(spec, IntervalSpace):
        coords = np.linspace(0.0, spec.length, spec.points)[:, None]
        dist = np.abs(coords - coords.T)
        return MetricMeasureSpace(dist, np.full(spec.points, 1.0 / spec.points), coords=coords)
    if isinstance(spec, CloudSpace):
        rng = np.random.default_rng(config.seed)
        coords = rng.random((spec.points, spec.dim))
        dist = squareform(pdist(coords)) if spec.points > 1 else np.zeros((1, 1))
        if spec.normalize and dist.max() > 0:
            scale = dist.max()
            dist, coords = dist / scale, coords / scale
        return MetricMeasureSpace(dist, np.full(spec.points, 1.0 / spec.points), coords=coords)
    grid = spec.spec()
    return riemannian_grid_family(grid, identity_tensor(len(grid.dims)), [1.0]).base


def build_family(
    config: ScenarioConfig, space: MetricMeasureSpace, base_dir: Path
) -> MonotoneDistanceFamily | None:
    spec = config.family
    if spec is None:
        return None
    if isinstance(spec, SnowflakeFamilySpec):
        if spec.schedule == "example":
            limit = 1.0 if spec.limit_alpha is None else spec.limit_alpha
            alphas = spec.alphas or example_snowflake_alphas(spec.count)
            include = bool(spec.include_limit)
        else:
            limit = 0.5 if spec.limit_alpha is None else spec.limit_alpha
            if spec.schedule == "geometric":
                alphas = spec.alphas or geometric_snowflake_alphas(spec.count, limit, spec.ratio)
            else:
                alphas = spec.alphas or increasing_snowflake_alphas(spec.count, limit)
            include = True if spec.include_limit is None else spec.include_limit
        return snowflake_family(space, alphas, limit, include_limit=include)
    if isinstance(spec, RiemannianFamilySpec):
        assert isinstance(config.space, GridSpace)
        grid = config.space.spec()
        tensor = resolve_tensor(spec.tensor, len(grid.dims), spec.params)
        return riemannian_grid_family(grid, tensor, spec.penalties, measure=space.measure)
    levels = tuple(read_distance_csv(_resolve(base_dir, name)) for name in spec.levels)
    return MonotoneDistanceFamily(space, levels, spec.direction)


def build_function(
    config: ScenarioConfig, space: MetricMeasureSpace, base_dir: Path
) -> ScalarField:
    spec = config.function
    if spec.kind == "distance":
        center = space.index_of(spec.center)
        values = np.array(space.dist[center], dtype=np.float64)
        if spec.clamp is not None:
            values = np.minimum(values, spec.clamp)
        return ScalarField(values)
    if spec.kind == "coordinate":
        if space.coords is None or spec.axis >= space.coords.shape[1]:
            raise ParameterError(
                f"Space has no coordinate axis {spec.axis}.",
                field="function.axis",
            )
        return ScalarField(np.array(space.coords[:, spec.axis]))
    if spec.kind == "constant":
        return ScalarField(np.full(space.size, spec.value))
    if spec.kind == "random":
        rng = np.random.default_rng(config.seed)
        return ScalarField(rng.standard_normal(space.size))
    if spec.path is None:
        raise ConfigError("function.path is required for kind = \"csv\".", field="function.path")
    return ScalarField(read_vector_csv(_resolve(base_dir, spec.path), space.size))


def energy_config(config: ScenarioConfig, space: MetricMeasureSpace) -> EnergyConfig:
    spec = config.energy
    return EnergyConfig.for_space(space, spec.p, scale=spec.scale, kind=spec.kind, backend=spec.backend)
