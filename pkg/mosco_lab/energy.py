"""Fixed-scale p-energies, the Sobolev norm and quadraticity checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, Field

from mosco_lab.errors import InvariantError, ParameterError, PreconditionError, ShapeError
from mosco_lab.fields import BallKind, FloatArray, integrate, parse_ball_kind
from mosco_lab.lipschitz import REL_SLACK, FieldLike, field_values, slope_field
from mosco_lab.metric_core import MONOTONE_SLACK, MetricMeasureSpace

logger = logging.getLogger(__name__)

DEFECT_FLOOR = 1e-300
HILBERTIAN_TOL = 1e-6


class EnergyBackend(str, Enum):
    SLOPE = "slope"
    GRAPH_DIRICHLET = "graph-dirichlet"


def parse_backend(value: str | EnergyBackend) -> EnergyBackend:
    if isinstance(value, EnergyBackend):
        return value
    normalized = value.strip().lower().replace("_", "-")
    for backend in EnergyBackend:
        if normalized == backend.value:
            return backend
    raise ParameterError(
        f"Unknown energy backend: {value!r}",
        field="backend",
        details={"choices": [b.value for b in EnergyBackend]},
    )


@dataclass(frozen=True)
class EnergyConfig:
    p: float
    scale: float
    kind: BallKind = BallKind.OPEN
    backend: EnergyBackend = EnergyBackend.SLOPE

    def __post_init__(self) -> None:
        if not self.p > 1 or not np.isfinite(self.p):
            raise ParameterError(f"Exponent p must be a finite number above 1, got {self.p}.", field="p")
        if not self.scale > 0 or not np.isfinite(self.scale):
            raise ParameterError(f"Scale must be positive, got {self.scale}.", field="scale")
        object.__setattr__(self, "kind", parse_ball_kind(self.kind))
        object.__setattr__(self, "backend", parse_backend(self.backend))

    @classmethod
    def for_space(
        cls,
        space: MetricMeasureSpace,
        p: float = 2.0,
        *,
        scale: float | None = None,
        kind: BallKind | str = BallKind.OPEN,
        backend: EnergyBackend | str = EnergyBackend.SLOPE,
    ) -> EnergyConfig:
        return cls(p, space.default_scale() if scale is None else scale, kind, backend)  # type: ignore[arg-type]

    def with_backend(self, backend: EnergyBackend | str) -> EnergyConfig:
        return EnergyConfig(self.p, self.scale, self.kind, parse_backend(backend))

    def describe(self) -> dict[str, object]:
        return {"p": self.p, "scale": self.scale, "kind": self.kind.value, "backend": self.backend.value}


class EnergyReport(BaseModel):
    value: float = Field(ge=0)
    density: list[float]
    p: float
    scale: float
    kind: str
    backend: str
    envelope_trivial: bool = False
    label: str = "asymptotic"


def _dirichlet_density(values: FloatArray, dist: FloatArray, config: EnergyConfig) -> FloatArray:
    size = values.shape[0]
    within = dist < config.scale if config.kind is BallKind.OPEN else dist <= config.scale
    within &= ~np.eye(size, dtype=bool)
    counts = within.sum(axis=1)
    safe = np.where(within, dist, 1.0)
    weights = np.where(within, 1.0 / (np.maximum(counts, 1)[:, None] * safe**2), 0.0)
    sums = (weights * (values[:, None] - values[None, :]) ** 2).sum(axis=1)
    return sums ** (config.p / 2.0)


def energy_density(f: FieldLike, space: MetricMeasureSpace, config: EnergyConfig) -> FloatArray:
    values = field_values(f, space.size)
    if config.backend is EnergyBackend.SLOPE:
        return slope_field(values, space.dist, config.scale, config.kind).values ** config.p
    return _dirichlet_density(values, space.dist, config)


def asymptotic_energy(f: FieldLike, space: MetricMeasureSpace, config: EnergyConfig) -> EnergyReport:
    """(1/p) * sum of density * m, with the density of the chosen backend."""

    density = energy_density(f, space, config)
    value = integrate(density, space.measure) / config.p
    return EnergyReport(
        value=max(value, 0.0),
        density=density.tolist(),
        p=config.p,
        scale=config.scale,
        kind=config.kind.value,
        backend=config.backend.value,
    )


def cheeger_energy(f: FieldLike, space: MetricMeasureSpace, config: EnergyConfig) -> EnergyReport:
    """Relaxed energy; at a fixed scale on a finite space it is the asymptotic one."""
    report = asymptotic_energy(f, space, config)
    return report.model_copy(update={"envelope_trivial": True, "label": "cheeger (fixed-scale surrogate)"})


def sobolev_norm(f: FieldLike, space: MetricMeasureSpace, config: EnergyConfig) -> float:
    values = field_values(f, space.size)
    lp_part = integrate(np.abs(values) ** config.p, space.measure)
    energy = cheeger_energy(values, space, config).value
    return float((lp_part + config.p * energy) ** (1.0 / config.p))


class EnergyComparison(BaseModel):
    energy: float
    energy_prime: float
    margin: float
    asserted: bool
    ok: bool


def energy_comparison_check(
    f: FieldLike,
    space: MetricMeasureSpace,
    space_prime: MetricMeasureSpace,
    config: EnergyConfig,
) -> EnergyComparison:
    """E under the larger distance must not exceed E under the smaller one.

    ``space_prime`` carries d' >= d. Only the slope backend is asserted.
    """

    if space.size != space_prime.size:
        raise ShapeError(
            "Compared spaces have different sizes.",
            details={"sizes": [space.size, space_prime.size]},
        )
    excess = space.dist - space_prime.dist - MONOTONE_SLACK * np.abs(space_prime.dist)
    if np.any(excess > 0):
        x, y = np.unravel_index(int(np.argmax(excess)), excess.shape)
        raise PreconditionError(
            f"d <= d' fails at pair ({int(x)}, {int(y)}).",
            details={"pair": [int(x), int(y)], "excess": float(excess[x, y])},
        )
    energy = asymptotic_energy(f, space, config).value
    energy_prime = asymptotic_energy(f, space_prime, config).value
    margin = energy - energy_prime
    asserted = config.backend is EnergyBackend.SLOPE
    ok = margin >= -REL_SLACK * energy
    if asserted and not ok:
        raise InvariantError(
            "Energy grew when distances grew.",
            module="energy",
            margin=margin,
            details={"energy": energy, "energy_prime": energy_prime},
        )
    return EnergyComparison(energy=energy, energy_prime=energy_prime, margin=margin, asserted=asserted, ok=ok)


class ParallelogramDefect(BaseModel):
    defect: float
    relative: float
    energy_f: float
    energy_g: float
    energy_sum: float
    energy_diff: float


def parallelogram_defect(
    f: FieldLike,
    g: FieldLike,
    space: MetricMeasureSpace,
    config: EnergyConfig,
) -> ParallelogramDefect:
    """E(f+g) + E(f-g) - 2E(f) - 2E(g); zero for a quadratic form."""

    if config.p != 2:
        raise ParameterError(f"Parallelogram defect needs p = 2, got {config.p}.", field="p")
    a = field_values(f, space.size)
    b = field_values(g, space.size)
    e_f = asymptotic_energy(a, space, config).value
    e_g = asymptotic_energy(b, space, config).value
    e_sum = asymptotic_energy(a + b, space, config).value
    e_diff = asymptotic_energy(a - b, space, config).value
    defect = e_sum + e_diff - 2.0 * e_f - 2.0 * e_g
    relative = abs(defect) / max(e_f + e_g, DEFECT_FLOOR)
    return ParallelogramDefect(
        defect=defect, relative=relative, energy_f=e_f, energy_g=e_g, energy_sum=e_sum, energy_diff=e_diff
    )


class HilbertianityScan(BaseModel):
    backend: str
    trials: int
    seed: int
    max_relative: float
    argmax: int
    worst_pair: tuple[list[float], list[float]]
    hilbertian: bool


def hilbertianity_scan(
    space: MetricMeasureSpace,
    config: EnergyConfig,
    trials: int,
    seed: int,
) -> HilbertianityScan:
    """Largest relative parallelogram defect over random Gaussian pairs."""

    if trials < 1:
        raise ParameterError(f"Trial count must be >= 1, got {trials}.", field="trials")
    rng = np.random.default_rng(seed)
    worst, worst_at = -1.0, 0
    worst_pair: tuple[list[float], list[float]] = ([], [])
    for trial in range(trials):
        f = rng.standard_normal(space.size)
        g = rng.standard_normal(space.size)
        relative = parallelogram_defect(f, g, space, config).relative
        if relative > worst:
            worst, worst_at = relative, trial
            worst_pair = (f.tolist(), g.tolist())
    logger.debug("hilbertianity scan (%s): max relative defect %.3g", config.backend.value, worst)
    return HilbertianityScan(
        backend=config.backend.value,
        trials=trials,
        seed=seed,
        max_relative=worst,
        argmax=worst_at,
        worst_pair=worst_pair,
        hilbertian=worst <= HILBERTIAN_TOL,
    )
