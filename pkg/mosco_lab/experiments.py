"""One function per experiment selector; each writes its files under ``out_dir``."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from mosco_lab import artifacts
from mosco_lab.approximation import ApproxReport, approx_with_slope_control
from mosco_lab.energy import (
    EnergyBackend,
    asymptotic_energy,
    cheeger_energy,
    energy_comparison_check,
    hilbertianity_scan,
    sobolev_norm,
)
from mosco_lab.fields import ScalarField
from mosco_lab.lipschitz import slope_field, slope_monotonicity_check, slope_upper_bound_check
from mosco_lab.metric_core import (
    FamilyDirection,
    MetricMeasureSpace,
    MonotoneDistanceFamily,
    distance_continuity_check,
    topology_pattern_check,
    uniform_convergence_gap,
    validate_metric,
)
from mosco_lab.mosco import (
    FunctionSequence,
    gamma_liminf_check,
    hilbertianity_stability_experiment,
    recovery_sequence,
    snowflake_counterexample,
)
from mosco_lab.scenario import (
    Experiment,
    ScenarioConfig,
    build_family,
    build_function,
    build_space,
    energy_config,
)

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    config: ScenarioConfig
    out_dir: Path
    base_dir: Path
    _space: MetricMeasureSpace | None = field(default=None, init=False)
    _family: MonotoneDistanceFamily | None = field(default=None, init=False)
    _family_built: bool = field(default=False, init=False)

    @property
    def space(self) -> MetricMeasureSpace:
        if self._space is None:
            self._space = build_space(self.config, self.base_dir)
        return self._space

    @property
    def family(self) -> MonotoneDistanceFamily | None:
        if not self._family_built:
            self._family = build_family(self.config, self.space, self.base_dir)
            self._family_built = True
        return self._family

    @property
    def reference(self) -> MetricMeasureSpace:
        """Space carrying the limit distance: the family base when present."""
        family = self.family
        return family.base if family is not None else self.space

    def require_family(self) -> MonotoneDistanceFamily:
        family = self.family
        assert family is not None, "scenario validation guarantees a family"
        return family

    def function(self) -> ScalarField:
        return build_function(self.config, self.reference, self.base_dir)


@dataclass
class ExperimentOutput:
    summary: dict[str, Any]
    files: list[Path]
    warnings: list[str] = field(default_factory=list)


def _slope_control_warnings(report: ApproxReport, label: str) -> list[str]:
    notes: list[str] = []
    if report.retries:
        notes.append(f"{label}: energy bound needed {report.retries} retries with a halved working tolerance")
    if not report.success:
        notes.append(f"{label}: retry budget exhausted, result is best effort")
    return notes


def run_validate(ctx: RunContext) -> ExperimentOutput:
    options = ctx.config.experiments.validate_
    space = ctx.space
    payload: dict[str, Any] = {"space": validate_metric(space.dist).model_dump(), "size": space.size}
    family = ctx.family
    if family is not None:
        payload["direction"] = family.direction.value
        payload["levels"] = [validate_metric(level).model_dump() for level in family.levels]
        payload["topology"] = topology_pattern_check(family)
        payload["gaps"] = uniform_convergence_gap(family, list(range(family.size))).model_dump()
        if options.continuity and family.size <= options.continuity_max_points:
            chain = [*family.levels, family.limit_distance]
            if family.direction is FamilyDirection.DECREASING:
                chain.reverse()
            payload["continuity"] = [
                distance_continuity_check(lower, upper).model_dump()
                for lower, upper in zip(chain, chain[1:])
            ]
        elif options.continuity:
            logger.info("continuity check skipped: %d points > %d", family.size, options.continuity_max_points)
    path = artifacts.write_json(ctx.out_dir / "validation.json", payload)
    ok = payload["space"]["ok"] and all(level["ok"] for level in payload.get("levels", []))
    return ExperimentOutput({"ok": ok, "size": space.size}, [path])


def run_energy(ctx: RunContext) -> ExperimentOutput:
    reference = ctx.reference
    f = ctx.function()
    base = energy_config(ctx.config, reference)
    family = ctx.family
    levels: list[tuple[str, MetricMeasureSpace]] = []
    if family is not None:
        levels.extend((str(level), space) for level, space in family.iter_levels())
    levels.append(("limit", reference))

    rows = []
    for backend in EnergyBackend:
        config = base.with_backend(backend)
        for name, space in levels:
            report = asymptotic_energy(f, space, config)
            cheeger = cheeger_energy(f, space, config)
            comparison = None
            if name != "limit":
                lower, upper = space, reference
                if family is not None and family.direction is FamilyDirection.DECREASING:
                    lower, upper = upper, lower
                comparison = energy_comparison_check(f, lower, upper, config)
            rows.append({
                "scale": config.scale,
                "level": name,
                "p": config.p,
                "backend": backend.value,
                "value": report.value,
                "cheeger": cheeger.value,
                "sobolev": sobolev_norm(f, space, config),
                "margin": comparison.margin if comparison else None,
            })

    slopes = slope_field(f, reference.dist, base.scale, base.kind)
    bound = slope_upper_bound_check(f, reference.dist, base.scale, base.kind)
    payload: dict[str, Any] = {"config": base.describe(), "slope_bound": bound.model_dump()}
    if family is not None:
        payload["slope_monotonicity_margin"] = slope_monotonicity_check(f, family, base.scale, base.kind).worst_margin
    columns = ["scale", "level", "p", "backend", "value", "cheeger", "sobolev", "margin"]
    files = [
        artifacts.write_csv(ctx.out_dir / "energy.csv", columns, rows),
        artifacts.write_csv(
            ctx.out_dir / "slopes.csv",
            ["point", "value", "scale"],
            [{"point": reference.points[x], "value": v, "scale": slopes.scale} for x, v in enumerate(slopes.values)],
        ),
        artifacts.write_json(ctx.out_dir / "energy.json", payload),
    ]
    return ExperimentOutput({"rows": len(rows), "limit_energy": rows[len(levels) - 1]["value"]}, files)


def run_approx(ctx: RunContext) -> ExperimentOutput:
    family = ctx.require_family()
    options = ctx.config.experiments.approx
    config = energy_config(ctx.config, family.base)
    result = approx_with_slope_control(
        ctx.function(), options.eps, family, config.p, config.scale,
        kind=config.kind, enforce_uniformity=options.enforce_uniformity,
    )
    row = result.report.to_row()
    files = [
        artifacts.write_json(ctx.out_dir / "approx.json", result.report.model_dump()),
        artifacts.write_csv(ctx.out_dir / "approx_summary.csv", list(row), [row]),
        artifacts.write_vector_csv(ctx.out_dir / "g.csv", result.g.values),
    ]
    return ExperimentOutput(
        {"level": result.level, "lp_gap": result.report.lp_gap, "success": result.report.success},
        files,
        _slope_control_warnings(result.report, "approx"),
    )


def _liminf_sequence(ctx: RunContext, f: ScalarField, length: int) -> FunctionSequence:
    options = ctx.config.experiments.liminf
    if options.sequence == "constant":
        return FunctionSequence.constant(f, length)
    point = ctx.reference.index_of(options.bump_point)
    bump = np.zeros(len(f))
    bump[point] = 1.0
    return FunctionSequence(tuple(ScalarField(f.values + bump / i) for i in range(1, length + 1)), f)


def run_liminf(ctx: RunContext) -> ExperimentOutput:
    family = ctx.require_family()
    config = energy_config(ctx.config, family.base)
    f = ctx.function()
    report = gamma_liminf_check(family, _liminf_sequence(ctx, f, family.level_count), config)
    columns = ["level", "energy", "reference", "margin", "tolerance", "lp_gap", "sup_gap", "limit_energy_of_member"]
    files = [
        artifacts.write_csv(ctx.out_dir / "liminf.csv", columns, [row.model_dump() for row in report.liminf_rows]),
        artifacts.write_json(ctx.out_dir / "liminf.json", report.model_dump()),
    ]
    return ExperimentOutput({"liminf_margin": report.liminf_margin, "ok": report.liminf_ok}, files)


def run_recovery(ctx: RunContext) -> ExperimentOutput:
    family = ctx.require_family()
    config = energy_config(ctx.config, family.base)
    sequence, report = recovery_sequence(
        ctx.function(), family, config, ctx.config.experiments.recovery.schedule
    )
    payload = {
        "report": report.model_dump(),
        "reindex": list(sequence.reindex),
        "truncated": sequence.truncated,
        "blocks": [block.model_dump() for block in sequence.block_reports],
    }
    columns = ["level", "block", "energy", "reference", "margin", "tolerance", "lp_gap"]
    files = [
        artifacts.write_csv(ctx.out_dir / "recovery.csv", columns, [row.model_dump() for row in report.recovery_rows]),
        artifacts.write_json(ctx.out_dir / "recovery.json", payload),
    ]
    notes: list[str] = []
    if sequence.truncated:
        notes.append(
            f"recovery: schedule truncated after {len(sequence.blocks)} of {ctx.config.experiments.recovery.schedule} blocks"
        )
    for n, block in enumerate(sequence.block_reports, start=1):
        notes.extend(_slope_control_warnings(block, f"recovery block {n}"))
    return ExperimentOutput(
        {"reindex": list(sequence.reindex), "truncated": sequence.truncated, "ok": report.limsup_ok},
        files,
        notes,
    )


def run_hilbertianity(ctx: RunContext) -> ExperimentOutput:
    family = ctx.require_family()
    config = energy_config(ctx.config, family.base)
    trials = ctx.config.experiments.hilbertianity.trials
    report = hilbertianity_stability_experiment(family, config, trials, ctx.config.seed)
    scan = hilbertianity_scan(family.base, config, trials, ctx.config.seed)
    files = [
        artifacts.write_csv(
            ctx.out_dir / "hilbertianity.csv",
            ["level", "max_relative", "hilbertian"],
            [row.model_dump() for row in report.rows],
        ),
        artifacts.write_json(
            ctx.out_dir / "hilbertianity.json",
            {"report": report.model_dump(), "limit_scan": scan.model_dump()},
        ),
    ]
    return ExperimentOutput({"limit_defect": report.limit_defect, "asserted": report.asserted}, files)


def run_snowflake(ctx: RunContext) -> ExperimentOutput:
    options = ctx.config.experiments.snowflake
    assert options is not None
    space = ctx.space
    config = energy_config(ctx.config, space)
    report = snowflake_counterexample(
        space, ctx.function(), config.p, options.radii, options.levels, config.kind
    )
    columns = ["level", "radius", "energy", "bound", "margin", "alpha", "max_slope", "base_energy"]
    files = [
        artifacts.write_csv(ctx.out_dir / "snowflake.csv", columns, [row.model_dump() for row in report.rows]),
        artifacts.write_csv(
            ctx.out_dir / "snowflake_fits.csv",
            ["level", "exponent", "target", "relative_error", "points", "zero_radii"],
            [fit.model_dump() for fit in report.fits],
        ),
        artifacts.write_json(ctx.out_dir / "snowflake.json", report.model_dump()),
    ]
    notes: list[str] = []
    if report.narrow_grid:
        notes.append(f"snowflake: radius grid spans less than a decade ({min(options.radii):.3g}..{max(options.radii):.3g})")
    return ExperimentOutput(
        {"rows": len(report.rows), "fits": {str(fit.level): fit.exponent for fit in report.fits}},
        files,
        notes,
    )


EXPERIMENTS: dict[Experiment, Callable[[RunContext], ExperimentOutput]] = {
    Experiment.VALIDATE: run_validate,
    Experiment.ENERGY: run_energy,
    Experiment.APPROX: run_approx,
    Experiment.MOSCO_LIMINF: run_liminf,
    Experiment.MOSCO_RECOVERY: run_recovery,
    Experiment.HILBERTIANITY: run_hilbertianity,
    Experiment.SNOWFLAKE: run_snowflake,
}


def run_experiment(ctx: RunContext) -> ExperimentOutput:
    logger.info("running %s into %s", ctx.config.experiment.value, ctx.out_dir)
    return EXPERIMENTS[ctx.config.experiment](ctx)
