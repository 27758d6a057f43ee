"""Lipschitz constants, fixed-scale slopes and cone-max approximation."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel

from mosco_lab.errors import ExhaustionError, InvariantError, ParameterError, ShapeError
from mosco_lab.fields import BallKind, FloatArray, ScalarField, SlopeField, parse_ball_kind
from mosco_lab.metric_core import FamilyDirection, MonotoneDistanceFamily, ball_members

logger = logging.getLogger(__name__)

REL_SLACK = 1e-12

FieldLike = ScalarField | FloatArray | Sequence[float]


def field_values(f: FieldLike, size: int | None = None) -> FloatArray:
    values = f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=np.float64)
    if size is not None and values.shape != (size,):
        raise ShapeError(
            f"Field has {values.shape[0] if values.ndim else 0} values for {size} points.",
            details={"expected": size, "shape": list(values.shape)},
        )
    return values


def point_indices(
    points: Sequence[int] | npt.NDArray[np.int64],
    size: int,
    *,
    field: str = "subset",
    unique: bool = True,
) -> npt.NDArray[np.int64]:
    """Point ids as an int array; ids outside 0..size-1 are rejected."""
    index = np.asarray(points, dtype=np.int64).reshape(-1)
    outside = index[(index < 0) | (index >= size)]
    if outside.size:
        bad = int(outside[0])
        raise ParameterError(
            f"Point index {bad} is outside 0..{size - 1}.",
            field=field,
            details={"index": bad, "size": size},
        )
    return np.unique(index) if unique else index


def ratio_matrix(values: FloatArray, dist: FloatArray) -> FloatArray:
    """|f(x) - f(y)| / d(x, y) off the diagonal, zero on it."""
    safe = np.where(dist > 0, dist, np.inf)
    return np.abs(values[:, None] - values[None, :]) / safe


def lip_constant(
    f: FieldLike,
    dist: FloatArray,
    subset: Sequence[int] | npt.NDArray[np.int64] | None = None,
) -> float:
    """Lip_d(f; E); zero for sets with at most one point."""

    values = field_values(f, dist.shape[0])
    if subset is None:
        index = np.arange(values.shape[0])
    else:
        index = point_indices(subset, values.shape[0])
    if index.size <= 1:
        return 0.0
    block = np.ix_(index, index)
    return float(ratio_matrix(values[index], dist[block]).max())


def slope_field(
    f: FieldLike,
    dist: FloatArray,
    scale: float,
    kind: BallKind | str = BallKind.OPEN,
) -> SlopeField:
    """Local Lipschitz constant of f on the scale-r ball around every point."""

    if not scale > 0 or not math.isfinite(scale):
        raise ParameterError(f"Slope scale must be positive, got {scale}.", field="scale")
    ball_kind = parse_ball_kind(kind)
    values = field_values(f, dist.shape[0])
    ratios = ratio_matrix(values, dist)
    slopes = np.zeros(values.shape[0])
    for x in range(values.shape[0]):
        members = ball_members(dist, x, scale, ball_kind)
        if members.size > 1:
            slopes[x] = ratios[np.ix_(members, members)].max()
    return SlopeField(scale=float(scale), kind=ball_kind, values=slopes)


@dataclass(frozen=True)
class SlopeMonotonicity:
    levels: tuple[SlopeField, ...]
    limit: SlopeField
    worst_margin: float
    ok: bool


def slope_monotonicity_check(
    f: FieldLike,
    family: MonotoneDistanceFamily,
    scale: float,
    kind: BallKind | str = BallKind.OPEN,
) -> SlopeMonotonicity:
    """Check that slopes shrink whenever distances grow, level by level.

    Raises ``InvariantError`` naming the level pair and point on failure.
    """

    fields = [slope_field(f, level, scale, kind) for level in family.levels]
    limit = slope_field(f, family.limit_distance, scale, kind)
    chain = [*fields, limit]
    names = [str(k) for k in range(1, len(fields) + 1)] + ["limit"]
    worst = math.inf
    for k in range(len(chain) - 1):
        small, large = chain[k].values, chain[k + 1].values
        if family.direction is FamilyDirection.DECREASING:
            small, large = large, small
        # small holds the slopes of the smaller distance, which must dominate
        margin = small - large
        slack = REL_SLACK * np.maximum(np.abs(small), np.abs(large))
        if np.any(margin < -slack):
            x = int(np.argmin(margin + slack))
            raise InvariantError(
                f"Slope grows from level {names[k]} to {names[k + 1]} at point {x}.",
                module="lipschitz",
                margin=float(margin[x]),
                details={"levels": [names[k], names[k + 1]], "point": x},
            )
        worst = min(worst, float(margin.min()))
    if not math.isfinite(worst):
        worst = 0.0
    return SlopeMonotonicity(levels=tuple(fields), limit=limit, worst_margin=worst, ok=True)


class SlopeBound(BaseModel):
    global_lipschitz: float
    max_slope: float
    margin: float
    ok: bool


def slope_upper_bound_check(
    f: FieldLike,
    dist: FloatArray,
    scale: float,
    kind: BallKind | str = BallKind.OPEN,
) -> SlopeBound:
    """Every slope value is at most the global Lipschitz constant."""

    global_lip = lip_constant(f, dist)
    slopes = slope_field(f, dist, scale, kind).values
    max_slope = float(slopes.max()) if slopes.size else 0.0
    margin = global_lip - max_slope
    if margin < -REL_SLACK * global_lip:
        raise InvariantError(
            "Slope exceeds the global Lipschitz constant.",
            module="lipschitz",
            margin=margin,
        )
    return SlopeBound(global_lipschitz=global_lip, max_slope=max_slope, margin=margin, ok=True)


def cone_lower_approx(
    f: FieldLike,
    anchors: Sequence[int] | npt.NDArray[np.int64],
    lipschitz_bound: float,
    n: int,
    dist: FloatArray,
) -> ScalarField:
    """max_j (f(x_j) - L d(x, x_j)) - 1/n over the given anchors."""

    index = point_indices(anchors, dist.shape[0], field="anchors", unique=False)
    if index.size == 0:
        raise ParameterError("Cone approximation needs at least one anchor.", field="anchors")
    if n < 1:
        raise ParameterError(f"Cone offset count must be >= 1, got {n}.", field="n")
    values = field_values(f, dist.shape[0])
    local = lip_constant(values, dist, index)
    if lipschitz_bound < local * (1.0 - REL_SLACK):
        logger.warning(
            "cone bound %.6g is below the anchors' Lipschitz constant %.6g; result may exceed f",
            lipschitz_bound,
            local,
        )
    cones = values[index][None, :] - lipschitz_bound * dist[:, index]
    return ScalarField(cones.max(axis=1) - 1.0 / n)


@dataclass(frozen=True)
class LipschitzApprox:
    """Result of the level scan: g lives at ``level`` and approximates f on K."""

    level: int
    g: ScalarField
    n: int
    gap: float
    lipschitz: float
    bound: float
    levels_tried: int


def approx_lipschitz(
    f: FieldLike,
    subset: Sequence[int] | npt.NDArray[np.int64],
    eps: float,
    family: MonotoneDistanceFamily,
    *,
    min_level: int = 1,
) -> LipschitzApprox:
    """Smallest level whose cone approximant is eps-close on K and not steeper than f."""

    if not eps > 0:
        raise ParameterError(f"Tolerance must be positive, got {eps}.", field="eps")
    index = point_indices(subset, family.size)
    if index.size == 0:
        raise ParameterError("Approximation set K is empty.", field="subset")
    values = field_values(f, family.size)
    bound = lip_constant(values, family.limit_distance)
    n = math.ceil(2.0 / eps)

    best_level, best_gap = min_level, math.inf
    tried = 0
    for level, space in family.iter_levels(min_level):
        tried += 1
        g = cone_lower_approx(values, index, bound, n, space.dist)
        gap = float(np.max(np.abs(g.values[index] - values[index])))
        lip = lip_constant(g, space.dist)
        logger.debug("approx_lipschitz level %d: gap=%.6g lip=%.6g", level, gap, lip)
        if gap <= eps and lip <= bound + REL_SLACK * bound:
            return LipschitzApprox(level, g, n, gap, lip, bound, tried)
        if gap < best_gap:
            best_level, best_gap = level, gap
    raise ExhaustionError(
        f"No level from {min_level} to {family.level_count} brings the cone gap below {eps}.",
        module="lipschitz",
        best_level=best_level,
        best_gap=best_gap,
        details={"eps": eps, "n": n},
    )
