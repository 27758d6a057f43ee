"""Finite-family checks of Mosco convergence and the snowflake failure."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel

from mosco_lab.approximation import ApproxReport, approx_with_slope_control
from mosco_lab.energy import EnergyBackend, EnergyConfig, asymptotic_energy, hilbertianity_scan
from mosco_lab.errors import ExhaustionError, InvariantError, ParameterError, ShapeError
from mosco_lab.fields import BallKind, FloatArray, ScalarField, integrate, parse_ball_kind
from mosco_lab.lipschitz import REL_SLACK, FieldLike, field_values, lip_constant, slope_field
from mosco_lab.metric_core import MetricMeasureSpace, MonotoneDistanceFamily, snowflake_transform

logger = logging.getLogger(__name__)

QUADRATIC_TOL = 1e-9


@dataclass(frozen=True)
class FunctionSequence:
    """f_1, ..., f_m converging (strongly) to ``limit``."""

    fields: tuple[ScalarField, ...]
    limit: ScalarField

    def __post_init__(self) -> None:
        if not self.fields:
            raise ParameterError("Function sequence is empty.", field="fields")
        sizes = {len(f) for f in self.fields}
        if sizes != {len(self.limit)}:
            raise ShapeError(
                "Sequence members and limit live on different point sets.",
                details={"sizes": sorted(sizes), "limit": len(self.limit)},
            )

    @classmethod
    def constant(cls, f: ScalarField, length: int) -> FunctionSequence:
        return cls(tuple(f for _ in range(length)), f)

    def __len__(self) -> int:
        return len(self.fields)

    def lp_gaps(self, measure: FloatArray, p: float) -> list[float]:
        return [integrate(np.abs(f.values - self.limit.values) ** p, measure) for f in self.fields]

    def sup_gaps(self) -> list[float]:
        return [(f - self.limit).sup_norm() for f in self.fields]


class MoscoRow(BaseModel):
    level: int
    block: int | None = None
    energy: float
    reference: float
    margin: float
    tolerance: float
    lp_gap: float
    sup_gap: float | None = None
    limit_energy_of_member: float | None = None


class MoscoReport(BaseModel):
    """Margins per level; verdicts follow from margins and tolerances only."""

    limit_energy: float
    p: float
    scale: float
    kind: str
    liminf_margin: float | None = None
    limsup_margin: float | None = None
    limsup_tolerance: float | None = None
    liminf_rows: list[MoscoRow] = []
    recovery_rows: list[MoscoRow] = []
    liminf_ok: bool | None = None
    limsup_ok: bool | None = None


def liminf_verdict(rows: Sequence[MoscoRow]) -> bool:
    return all(row.margin + row.tolerance >= 0 for row in rows)


def limsup_verdict(margin: float, tolerance: float) -> bool:
    return margin + tolerance >= 0


def _require_slope(config: EnergyConfig, operation: str) -> None:
    if config.backend is not EnergyBackend.SLOPE:
        raise ParameterError(f"{operation} needs the slope backend.", field="backend")


def continuity_bound(
    limit_slope: FloatArray, sup_gap: float, min_distance: float, measure: FloatArray, p: float
) -> float:
    """Upper bound for E(f) - E(f_i) when |f - f_i| <= sup_gap pointwise."""
    if sup_gap == 0 or not math.isfinite(min_distance):
        return 0.0
    shift = 2.0 * sup_gap / min_distance
    return integrate((limit_slope + shift) ** p - limit_slope**p, measure) / p


def gamma_liminf_check(
    family: MonotoneDistanceFamily,
    sequence: FunctionSequence,
    config: EnergyConfig,
) -> MoscoReport:
    """Lower-bound chain E^{d_i}(f_i) >= E^{d}(f_i) >= E^{d}(f) - kappa_i."""

    family.require_increasing("The liminf check")
    _require_slope(config, "The liminf check")
    if len(sequence.limit) != family.size:
        raise ShapeError(
            "Sequence and family live on different point sets.",
            details={"sequence": len(sequence.limit), "family": family.size},
        )
    if len(sequence) > family.level_count:
        raise ParameterError(
            f"Sequence has {len(sequence)} members but the family only {family.level_count} levels.",
            field="sequence",
        )
    limit_space = family.base
    limit_energy = asymptotic_energy(sequence.limit, limit_space, config).value
    limit_slope = slope_field(sequence.limit, limit_space.dist, config.scale, config.kind).values
    lp_gaps = sequence.lp_gaps(limit_space.measure, config.p)
    sup_gaps = sequence.sup_gaps()

    rows = []
    for level, (member, lp_gap, sup_gap) in enumerate(zip(sequence.fields, lp_gaps, sup_gaps), start=1):
        energy = asymptotic_energy(member, family.level_space(level), config).value
        at_limit = asymptotic_energy(member, limit_space, config).value
        if energy < at_limit - REL_SLACK * at_limit:
            raise InvariantError(
                f"Level {level} energy {energy:.17g} is below the limit-distance energy {at_limit:.17g}.",
                module="mosco",
                margin=energy - at_limit,
                details={"level": level},
            )
        kappa = continuity_bound(
            limit_slope, sup_gap, limit_space.min_positive_distance, limit_space.measure, config.p
        )
        rows.append(MoscoRow(
            level=level,
            energy=energy,
            reference=limit_energy,
            margin=energy - limit_energy,
            tolerance=kappa,
            lp_gap=lp_gap,
            sup_gap=sup_gap,
            limit_energy_of_member=at_limit,
        ))
    ok = liminf_verdict(rows)
    if not ok:
        worst = min(rows, key=lambda row: row.margin + row.tolerance)
        raise InvariantError(
            f"Liminf inequality fails at level {worst.level}.",
            module="mosco",
            margin=worst.margin + worst.tolerance,
        )
    return MoscoReport(
        limit_energy=limit_energy,
        p=config.p,
        scale=config.scale,
        kind=config.kind.value,
        liminf_margin=min(row.margin for row in rows),
        liminf_rows=rows,
        liminf_ok=ok,
    )


@dataclass(frozen=True)
class RecoverySequence:
    """Blocks g_n placed on levels reindex[n] .. reindex[n+1] - 1."""

    reindex: tuple[int, ...]
    blocks: tuple[ScalarField, ...]
    members: dict[int, ScalarField]
    energies: dict[int, float]
    block_reports: tuple[ApproxReport, ...]
    truncated: bool

    def block_of(self, level: int) -> int:
        for n in range(len(self.reindex) - 1, -1, -1):
            if self.reindex[n] <= level:
                return n
        raise ParameterError(f"Level {level} precedes the first block.", field="level")


def recovery_sequence(
    f: FieldLike,
    family: MonotoneDistanceFamily,
    config: EnergyConfig,
    schedule_length: int,
) -> tuple[RecoverySequence, MoscoReport]:
    """Build g_n with tolerance 1/n at strictly increasing levels and check the upper bound."""

    family.require_increasing("Recovery sequences")
    _require_slope(config, "Recovery sequences")
    if schedule_length < 1:
        raise ParameterError("Schedule length must be >= 1.", field="schedule_length")
    values = field_values(f, family.size)
    limit_space = family.base

    reindex: list[int] = []
    blocks: list[ScalarField] = []
    reports: list[ApproxReport] = []
    truncated = False
    first_failure: ExhaustionError | None = None
    next_level = 1
    for n in range(1, schedule_length + 1):
        if next_level > family.level_count:
            truncated = True
            break
        try:
            result = approx_with_slope_control(
                values, 1.0 / n, family, config.p, config.scale,
                kind=config.kind, min_level=next_level,
            )
        except ExhaustionError as exc:
            logger.warning("recovery: block %d exhausted the family (%s)", n, exc.message)
            truncated = True
            if not blocks:
                first_failure = exc
            break
        reindex.append(result.level)
        blocks.append(result.g)
        reports.append(result.report)
        next_level = result.level + 1
    if truncated:
        logger.warning("recovery: schedule truncated after %d of %d blocks", len(blocks), schedule_length)
    if not blocks:
        best_level = family.level_count
        best_gap = math.inf
        if first_failure is not None:
            best_level, best_gap = first_failure.best_level, first_failure.best_gap
        raise ExhaustionError(
            "No recovery block fits in the family.",
            module="mosco",
            best_level=best_level,
            best_gap=best_gap,
        ) from first_failure

    limit_energy = asymptotic_energy(values, limit_space, config).value
    members: dict[int, ScalarField] = {}
    energies: dict[int, float] = {}
    rows: list[MoscoRow] = []
    for n, (start, block) in enumerate(zip(reindex, blocks)):
        stop = reindex[n + 1] if n + 1 < len(reindex) else family.level_count + 1
        block_energy = asymptotic_energy(block, family.level_space(start), config).value
        lp_gap = integrate(np.abs(block.values - values) ** config.p, limit_space.measure)
        if lp_gap > (1.0 / (n + 1)) * (1.0 + REL_SLACK):
            raise InvariantError(
                f"Block {n + 1} is {lp_gap:.6g} away from f in L^p.",
                module="mosco",
                margin=1.0 / (n + 1) - lp_gap,
            )
        for level in range(start, stop):
            energy = asymptotic_energy(block, family.level_space(level), config).value
            if energy > block_energy + REL_SLACK * block_energy:
                raise InvariantError(
                    f"Level {level} energy exceeds its block's starting energy.",
                    module="mosco",
                    margin=block_energy - energy,
                    details={"level": level, "block": n + 1},
                )
            members[level] = block
            energies[level] = energy
            rows.append(MoscoRow(
                level=level,
                block=n + 1,
                energy=energy,
                reference=limit_energy,
                margin=limit_energy - energy,
                tolerance=1.0 / (n + 1) + reports[n].extension_energy_deviation,
                lp_gap=lp_gap,
            ))

    last = len(blocks)
    tail = [row for row in rows if row.block == last]
    limsup_margin = limit_energy - max(row.energy for row in tail)
    tolerance = 1.0 / last + reports[-1].extension_energy_deviation
    ok = limsup_verdict(limsup_margin, tolerance)
    if not ok and all(report.success for report in reports):
        raise InvariantError(
            "Recovery energies overshoot the limit energy beyond tolerance.",
            module="mosco",
            margin=limsup_margin + tolerance,
        )
    sequence = RecoverySequence(
        reindex=tuple(reindex),
        blocks=tuple(blocks),
        members=members,
        energies=energies,
        block_reports=tuple(reports),
        truncated=truncated,
    )
    report = MoscoReport(
        limit_energy=limit_energy,
        p=config.p,
        scale=config.scale,
        kind=config.kind.value,
        limsup_margin=limsup_margin,
        limsup_tolerance=tolerance,
        recovery_rows=rows,
        limsup_ok=ok,
    )
    return sequence, report


class StabilityRow(BaseModel):
    level: str
    max_relative: float
    hilbertian: bool


class StabilityReport(BaseModel):
    backend: str
    trials: int
    seed: int
    rows: list[StabilityRow]
    limit_defect: float
    asserted: bool


def hilbertianity_stability_experiment(
    family: MonotoneDistanceFamily,
    config: EnergyConfig,
    trials: int,
    seed: int,
) -> StabilityReport:
    """Parallelogram scans at every level and the limit with one seed.

    The graph-dirichlet backend is asserted at 1e-9; the slope backend is
    reported as measured.
    """

    if config.p != 2:
        raise ParameterError(f"Hilbertianity needs p = 2, got {config.p}.", field="p")
    spaces = [(str(level), space) for level, space in family.iter_levels()]
    spaces.append(("limit", family.base))
    rows = []
    for name, space in spaces:
        scan = hilbertianity_scan(space, config, trials, seed)
        rows.append(StabilityRow(level=name, max_relative=scan.max_relative, hilbertian=scan.hilbertian))
    asserted = config.backend is EnergyBackend.GRAPH_DIRICHLET
    if asserted:
        for row in rows:
            if row.max_relative > QUADRATIC_TOL:
                raise InvariantError(
                    f"Dirichlet energy fails the parallelogram law at level {row.level}.",
                    module="mosco",
                    margin=QUADRATIC_TOL - row.max_relative,
                )
    return StabilityReport(
        backend=config.backend.value,
        trials=trials,
        seed=seed,
        rows=rows,
        limit_defect=rows[-1].max_relative,
        asserted=asserted,
    )


class ScalingRow(BaseModel):
    level: int
    alpha: float
    radius: float
    energy: float
    base_energy: float
    bound: float
    max_slope: float
    margin: float


class ScalingFit(BaseModel):
    level: int
    exponent: float | None
    target: float
    relative_error: float | None
    points: int
    zero_radii: int


class SnowflakeReport(BaseModel):
    p: float
    kind: str
    lipschitz: float
    rows: list[ScalingRow]
    fits: list[ScalingFit]
    narrow_grid: bool = False


def snowflake_bound(lipschitz: float, level: int, radius: float) -> float:
    """Largest slope on a d**(1 - 1/i) ball of radius r for an L-Lipschitz f."""
    exponent = 1.0 / (level - 1)
    return lipschitz * (2.0 * radius) ** exponent


def snowflake_counterexample(
    space: MetricMeasureSpace,
    f: FieldLike,
    p: float,
    radii: Sequence[float],
    levels: Sequence[int],
    kind: BallKind | str = BallKind.OPEN,
) -> SnowflakeReport:
    """Energies of f under d**(1 - 1/i) shrink like r**(p/(i-1)) as r -> 0."""

    if not levels or any(level < 2 for level in levels):
        raise ParameterError("Snowflake levels must all be >= 2.", field="levels")
    if not radii or any(r <= 0 for r in radii):
        raise ParameterError("Radii must be positive.", field="radii")
    narrow_grid = max(radii) < 10.0 * min(radii)
    if narrow_grid:
        logger.warning("snowflake radius grid spans less than a decade (%.3g..%.3g)", min(radii), max(radii))
    ball_kind = parse_ball_kind(kind)
    values = field_values(f, space.size)
    lipschitz = lip_constant(values, space.dist)
    grid = sorted(float(r) for r in radii)

    base_energies = {
        r: asymptotic_energy(values, space, EnergyConfig(p, r, ball_kind)).value for r in grid
    }
    rows: list[ScalingRow] = []
    fits: list[ScalingFit] = []
    for level in levels:
        alpha = 1.0 - 1.0 / level
        level_space = space.with_distance(snowflake_transform(space, alpha))
        usable_r, usable_e = [], []
        for r in grid:
            config = EnergyConfig(p, r, ball_kind)
            energy = asymptotic_energy(values, level_space, config).value
            slopes = slope_field(values, level_space.dist, r, ball_kind).values
            bound = snowflake_bound(lipschitz, level, r)
            max_slope = float(slopes.max())
            if max_slope > bound * (1.0 + REL_SLACK):
                point = int(np.argmax(slopes))
                raise InvariantError(
                    f"Slope at point {point} exceeds the snowflake bound at level {level}, r={r}.",
                    module="mosco",
                    margin=bound - max_slope,
                    details={"level": level, "radius": r, "point": point},
                )
            rows.append(ScalingRow(
                level=level, alpha=alpha, radius=r, energy=energy, base_energy=base_energies[r],
                bound=bound, max_slope=max_slope, margin=bound - max_slope,
            ))
            if energy > 0:
                usable_r.append(r)
                usable_e.append(energy)
        target = p / (level - 1)
        exponent: float | None = None
        relative: float | None = None
        if len(usable_r) >= 2:
            exponent = float(np.polyfit(np.log(usable_r), np.log(usable_e), 1)[0])
            relative = abs(exponent - target) / target
        fits.append(ScalingFit(
            level=level, exponent=exponent, target=target, relative_error=relative,
            points=len(usable_r), zero_radii=len(grid) - len(usable_r),
        ))
        logger.debug("snowflake level %d: exponent %s (target %.3g)", level, exponent, target)
    return SnowflakeReport(
        p=p, kind=ball_kind.value, lipschitz=lipschitz, rows=rows, fits=fits, narrow_grid=narrow_grid
    )
