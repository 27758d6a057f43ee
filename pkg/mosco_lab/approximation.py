"""Slope-controlled approximation of a function along an increasing family.

The pipeline runs five steps: good-set selection, partition of unity, patching
of local cone approximants, McShane extension off the good set and a cut-off
around the support of f. Conclusions are checked on the returned function.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel

from mosco_lab.errors import ExhaustionError, InvariantError, ParameterError
from mosco_lab.fields import BallKind, FloatArray, ScalarField, integrate, parse_ball_kind
from mosco_lab.lipschitz import (
    REL_SLACK,
    FieldLike,
    approx_lipschitz,
    field_values,
    lip_constant,
    point_indices,
    ratio_matrix,
    slope_field,
)
from mosco_lab.metric_core import MonotoneDistanceFamily, ball_members

logger = logging.getLogger(__name__)

IndexSet = Sequence[int] | npt.NDArray[np.int64]

PARTITION_TOL = 1e-12
RETRY_BUDGET = 4


def _indices(points: IndexSet, size: int, field: str = "subset") -> npt.NDArray[np.int64]:
    return point_indices(points, size, field=field)


@dataclass(frozen=True)
class EgorovSelection:
    good_set: tuple[int, ...]
    ambient: tuple[int, ...]
    radius: float
    eps_prime: float
    bad_mass: float
    reference_scale: float
    halvings: int


def egorov_select(
    f: FieldLike,
    dist: FloatArray,
    ambient: IndexSet,
    eps_prime: float,
    measure: FloatArray,
    reference_scale: float,
    kind: BallKind | str = BallKind.OPEN,
) -> EgorovSelection:
    """Largest radius r0/2**j whose good set leaves at most eps' mass outside.

    A point is good when f is at most (slope + eps')-Lipschitz on its 4r-ball,
    the slope taken at the reference scale.
    """

    if not 0.0 < eps_prime < 0.25:
        raise ParameterError(f"eps' must lie in (0, 1/4), got {eps_prime}.", field="eps_prime")
    ball_kind = parse_ball_kind(kind)
    values = field_values(f, dist.shape[0])
    box = _indices(ambient, dist.shape[0], "ambient")
    reference = slope_field(values, dist, reference_scale, ball_kind).values
    ratios = ratio_matrix(values, dist)
    positive = dist[dist > 0]
    min_positive = float(positive.min()) if positive.size else math.inf

    radius = float(reference_scale)
    halvings = 0
    while True:
        good = []
        for x in box:
            members = ball_members(dist, int(x), 4.0 * radius, ball_kind)
            local = ratios[np.ix_(members, members)].max() if members.size > 1 else 0.0
            if local <= reference[x] + eps_prime:
                good.append(int(x))
        bad = np.setdiff1d(box, good)
        bad_mass = integrate(np.ones(bad.size), measure[bad])
        if bad_mass <= eps_prime or 4.0 * radius < min_positive:
            break
        radius /= 2.0
        halvings += 1
    logger.debug("egorov: r=%.6g after %d halvings, bad mass %.3g", radius, halvings, bad_mass)
    return EgorovSelection(
        good_set=tuple(good),
        ambient=tuple(int(x) for x in box),
        radius=radius,
        eps_prime=eps_prime,
        bad_mass=bad_mass,
        reference_scale=float(reference_scale),
        halvings=halvings,
    )


@dataclass(frozen=True)
class PartitionOfUnity:
    """Weights psi_j (rows) on the good set, zero elsewhere."""

    anchors: tuple[int, ...]
    radius: float
    weights: FloatArray
    lip_bounds: tuple[float, ...]

    @property
    def size(self) -> int:
        return len(self.anchors)


def greedy_anchors(points: IndexSet, dist: FloatArray, radius: float) -> list[int]:
    """Farthest-point traversal until every point is within ``radius`` of an anchor."""
    pool = _indices(points, dist.shape[0], "points")
    anchors = [int(pool[0])]
    nearest = dist[pool[0], pool].copy()
    while True:
        far = int(np.argmax(nearest))
        if nearest[far] < radius:
            return anchors
        anchors.append(int(pool[far]))
        nearest = np.minimum(nearest, dist[pool[far], pool])


def build_partition(
    good_set: IndexSet,
    radius: float,
    dist: FloatArray,
    dist_first: FloatArray,
) -> PartitionOfUnity:
    """Linear bumps max(0, 1 - d(x, x_j)/r) normalised on the good set.

    Bumps use ``dist`` so each weight lives in the matching ball; Lipschitz
    bounds are measured under ``dist_first``.
    """

    pool = _indices(good_set, dist.shape[0], "good_set")
    if pool.size == 0:
        raise ParameterError("Cannot partition an empty set.", field="good_set")
    if not radius > 0:
        raise ParameterError(f"Partition radius must be positive, got {radius}.", field="radius")
    anchors = greedy_anchors(pool, dist, radius)
    raw = np.maximum(0.0, 1.0 - dist[np.ix_(anchors, pool)] / radius)
    total = raw.sum(axis=0)
    weights = np.zeros((len(anchors), dist.shape[0]))
    weights[:, pool] = raw / total

    drift = float(np.max(np.abs(weights[:, pool].sum(axis=0) - 1.0)))
    if drift > PARTITION_TOL:
        raise InvariantError("Partition weights do not sum to one.", module="approximation", margin=-drift)
    lip_bounds = tuple(lip_constant(row, dist_first, pool) for row in weights)
    return PartitionOfUnity(tuple(anchors), float(radius), weights, lip_bounds)


def mcshane_envelope(f: FieldLike, dist: FloatArray, subset: IndexSet, constant: float) -> FloatArray:
    """min over y in the subset of f(y) + C d(x, y)."""
    values = field_values(f, dist.shape[0])
    index = _indices(subset, dist.shape[0])
    if index.size == 0:
        raise ParameterError("McShane extension needs a nonempty set.", field="subset")
    return np.min(values[index][None, :] + constant * dist[:, index], axis=1)


def uniformity_level(
    family: MonotoneDistanceFamily,
    subset: IndexSet,
    tolerance: float,
    min_level: int = 1,
) -> int:
    """First level with d <= d_i + tolerance on subset x subset."""

    index = _indices(subset, family.size)
    block = np.ix_(index, index)
    limit = family.limit_distance[block]
    best_level, best_gap = min_level, math.inf
    for level, space in family.iter_levels(min_level):
        gap = float(np.max(limit - space.dist[block]))
        if gap <= tolerance:
            return level
        if gap < best_gap:
            best_level, best_gap = level, gap
    raise ExhaustionError(
        f"No level is uniformly within {tolerance:.3g} of the limit on K.",
        module="approximation",
        best_level=best_level,
        best_gap=best_gap,
    )


@dataclass(frozen=True)
class PatchResult:
    level: int
    anchor_level: int
    uniformity_level: int | None
    local_levels: tuple[int, ...]
    h_tilde: ScalarField
    lipschitz: float
    bound: float
    max_deviation: float


def patch(
    f: FieldLike,
    partition: PartitionOfUnity,
    family: MonotoneDistanceFamily,
    eps_prime: float,
    good_set: IndexSet,
    *,
    kind: BallKind | str = BallKind.OPEN,
    min_level: int = 1,
    enforce_uniformity: bool = False,
) -> PatchResult:
    """Glue per-anchor cone approximants with the partition weights on K."""

    ball_kind = parse_ball_kind(kind)
    dist = family.limit_distance
    values = field_values(f, family.size)
    pool = _indices(good_set, family.size, "good_set")
    lip_f = lip_constant(values, dist)
    k = partition.size

    local_levels = []
    local_fits = []
    for anchor, psi_lip in zip(partition.anchors, partition.lip_bounds):
        near = ball_members(dist, anchor, 2.0 * partition.radius, ball_kind)
        local = mcshane_envelope(values, dist, near, lip_constant(values, dist, near))
        tol = eps_prime / max(k * psi_lip, 1.0)
        fit = approx_lipschitz(local, pool, tol, family, min_level=min_level)
        local_levels.append(fit.level)
        local_fits.append(fit.g.values)

    anchor_level = max(local_levels)
    start: int | None
    try:
        start = uniformity_level(family, pool, eps_prime * partition.radius, min_level)
    except ExhaustionError:
        if enforce_uniformity:
            raise
        start = None
    level = max(anchor_level, start) if enforce_uniformity and start is not None else anchor_level

    h_tilde = np.zeros(family.size)
    h_tilde[pool] = np.sum(partition.weights[:, pool] * np.asarray(local_fits)[:, pool], axis=0)
    deviation = float(np.max(np.abs(h_tilde[pool] - values[pool])))
    if deviation > eps_prime * (1.0 + REL_SLACK):
        raise InvariantError(
            "Patched function strays more than eps' from f on K.",
            module="approximation",
            margin=eps_prime - deviation,
        )

    level_dist = family.level_distance(level)
    measured = lip_constant(h_tilde, level_dist, pool)
    bound = 5.0 * lip_f + eps_prime
    if measured > bound * (1.0 + REL_SLACK):
        if enforce_uniformity:
            raise InvariantError(
                f"Patched function is {measured:.6g}-Lipschitz on K, above {bound:.6g}.",
                module="approximation",
                margin=bound - measured,
            )
        logger.warning("patch: Lipschitz constant %.6g exceeds %.6g without uniformity", measured, bound)
    logger.debug("patch: k=%d levels=%s anchors=%d uniform=%s", k, local_levels, anchor_level, start)
    return PatchResult(
        level=level,
        anchor_level=anchor_level,
        uniformity_level=start,
        local_levels=tuple(local_levels),
        h_tilde=ScalarField(h_tilde),
        lipschitz=measured,
        bound=bound,
        max_deviation=deviation,
    )


@dataclass(frozen=True)
class Extension:
    h: ScalarField
    constant: float
    slope_h: FloatArray
    slope_h_tilde: FloatArray
    slope_deviation: float


def extend_slope_controlled(
    h_tilde: FieldLike,
    good_set: IndexSet,
    dist: FloatArray,
    eps_prime: float,
    scale: float,
    kind: BallKind | str = BallKind.OPEN,
) -> Extension:
    """McShane extension of h~ from K with constant Lip(h~ on K) + eps'.

    Slopes on K are compared with the slopes of h~ inside K alone; the
    largest excess is reported as ``slope_deviation``.
    """

    pool = _indices(good_set, dist.shape[0], "good_set")
    if pool.size == 0:
        raise ParameterError("Extension set K is empty.", field="good_set")
    values = field_values(h_tilde, dist.shape[0])
    constant = lip_constant(values, dist, pool) + eps_prime
    h = mcshane_envelope(values, dist, pool, constant)
    h[pool] = values[pool]

    block = dist[np.ix_(pool, pool)]
    slope_h = slope_field(h, dist, scale, kind).values[pool]
    slope_inner = slope_field(values[pool], block, scale, kind).values
    deviation = float(np.max(slope_h - slope_inner))
    return Extension(ScalarField(h), constant, slope_h, slope_inner, max(deviation, 0.0))


@dataclass(frozen=True)
class CutoffField:
    eta: ScalarField
    core: tuple[int, ...]
    halo: tuple[int, ...]
    empty_support: bool


def apply_cutoff(
    h: FieldLike,
    f: FieldLike,
    good_set: IndexSet,
    dist: FloatArray,
) -> tuple[ScalarField, CutoffField]:
    """g = eta * h with eta = clip(2 - d_i(x, spt f on K), 0, 1)."""

    size = dist.shape[0]
    h_values = field_values(h, size)
    f_values = field_values(f, size)
    anchor = np.intersect1d(np.flatnonzero(f_values), _indices(good_set, size, "good_set"))
    if anchor.size == 0:
        zero = ScalarField.zeros(size)
        return zero, CutoffField(zero, (), (), empty_support=True)

    reach = dist[:, anchor].min(axis=1)
    eta = np.clip(2.0 - reach, 0.0, 1.0)
    g = eta * h_values

    product_bound = lip_constant(h_values, dist) + float(np.max(np.abs(h_values)))
    lip_g = lip_constant(g, dist)
    if lip_g > product_bound * (1.0 + REL_SLACK) + REL_SLACK:
        raise InvariantError(
            "Cut-off product exceeds Lip(h) + sup|h|.",
            module="approximation",
            margin=product_bound - lip_g,
        )
    cutoff = CutoffField(
        eta=ScalarField(eta),
        core=tuple(int(x) for x in np.flatnonzero(reach <= 1.0)),
        halo=tuple(int(x) for x in np.flatnonzero(reach <= 2.0)),
        empty_support=False,
    )
    return ScalarField(g), cutoff


class ApproxReport(BaseModel):
    level: int
    anchor_level: int
    uniformity_level: int | None
    p: float
    eps: float
    eps_prime: float
    scale: float
    kind: str
    lp_gap: float
    energy_excess: float
    lipschitz: float
    constant_c: float
    bad_mass: float
    egorov_radius: float
    partition_size: int
    patch_lipschitz: float
    extension_constant: float
    slope_deviation: float
    extension_energy_deviation: float
    retries: int
    lp_ok: bool
    energy_ok: bool
    success: bool
    trivial: bool = False

    def to_row(self) -> dict[str, object]:
        return self.model_dump()


@dataclass(frozen=True)
class SlopeControlResult:
    level: int
    g: ScalarField
    report: ApproxReport


def _working_tolerance(eps: float, p: float, lip: float, sup: float, ball_mass: float) -> float:
    weight = (3.0 * p * lip ** (p - 1.0) + 1.0) * ball_mass + (15.0 * lip + 2.0 * sup + 7.0) ** p
    return min(eps / weight, 0.2)


def approx_with_slope_control(
    f: FieldLike,
    eps: float,
    family: MonotoneDistanceFamily,
    p: float,
    scale: float | None = None,
    *,
    kind: BallKind | str = BallKind.OPEN,
    enforce_uniformity: bool = False,
    retries: int = RETRY_BUDGET,
    min_level: int = 1,
) -> SlopeControlResult:
    """Find a level i and a d_i-Lipschitz g with both integral bounds.

    ``lp_gap`` = sum |g - f|^p m must not exceed eps. The slope integral of g
    at level i may exceed that of f by at most eps; when the extension step
    breaks this the whole pipeline reruns with half the working tolerance.
    """

    family.require_increasing("Slope-controlled approximation")
    if not eps > 0:
        raise ParameterError(f"Tolerance must be positive, got {eps}.", field="eps")
    if not p > 1:
        raise ParameterError(f"Exponent p must exceed 1, got {p}.", field="p")
    ball_kind = parse_ball_kind(kind)
    space = family.base
    r = space.default_scale() if scale is None else float(scale)
    values = field_values(f, family.size)
    measure = space.measure
    dist = family.limit_distance
    lip_f = lip_constant(values, dist)
    sup_f = float(np.max(np.abs(values)))

    support = np.flatnonzero(values)
    if support.size == 0:
        family.level_distance(min_level)
        report = ApproxReport(
            level=min_level, anchor_level=min_level, uniformity_level=min_level, p=p, eps=eps,
            eps_prime=0.0, scale=r, kind=ball_kind.value, lp_gap=0.0, energy_excess=0.0,
            lipschitz=0.0, constant_c=0.0, bad_mass=0.0, egorov_radius=r, partition_size=0,
            patch_lipschitz=0.0, extension_constant=0.0, slope_deviation=0.0,
            extension_energy_deviation=0.0, retries=0, lp_ok=True, energy_ok=True,
            success=True, trivial=True,
        )
        return SlopeControlResult(min_level, ScalarField.zeros(family.size), report)

    first = family.level_distance(1)
    center = int(support[0])
    reach = float(first[center, support].max())
    ball = np.flatnonzero(first[center] <= reach + 2.0)
    eps_prime = _working_tolerance(eps, p, lip_f, sup_f, space.mass_of(ball))
    target = integrate(slope_field(values, dist, r, ball_kind).values ** p, measure)

    result: SlopeControlResult | None = None
    for attempt in range(retries + 1):
        result = _run_pipeline(
            values, eps, eps_prime, family, p, r, ball_kind, ball, target,
            enforce_uniformity=enforce_uniformity, min_level=min_level, attempt=attempt,
        )
        if result.report.energy_ok:
            break
        logger.warning(
            "slope control: excess %.3g > eps at level %d, retrying with eps'=%.3g",
            result.report.energy_excess, result.level, eps_prime / 2.0,
        )
        eps_prime /= 2.0
    assert result is not None
    if not result.report.success:
        logger.warning("slope control: retry budget exhausted, returning best effort")
    return result


def _run_pipeline(
    values: FloatArray,
    eps: float,
    eps_prime: float,
    family: MonotoneDistanceFamily,
    p: float,
    scale: float,
    kind: BallKind,
    ball: npt.NDArray[np.int64],
    target: float,
    *,
    enforce_uniformity: bool,
    min_level: int,
    attempt: int,
) -> SlopeControlResult:
    dist = family.limit_distance
    measure = family.base.measure
    lip_f = lip_constant(values, dist)

    selection = egorov_select(values, dist, ball, eps_prime, measure, scale, kind)
    if not selection.good_set:
        # all of B fits in eps' mass; g = 0 already meets the integral bound
        g = ScalarField.zeros(family.size)
        level = min_level
        patched = None
        extension = None
        cutoff_empty = True
    else:
        partition = build_partition(selection.good_set, selection.radius, dist, family.level_distance(1))
        patched = patch(
            values, partition, family, eps_prime, selection.good_set,
            kind=kind, min_level=min_level, enforce_uniformity=enforce_uniformity,
        )
        level = patched.level
        level_dist = family.level_distance(level)
        extension = extend_slope_controlled(
            patched.h_tilde, selection.good_set, level_dist, eps_prime, scale, kind
        )
        g, cutoff = apply_cutoff(extension.h, values, selection.good_set, level_dist)
        cutoff_empty = cutoff.empty_support

    level_dist = family.level_distance(level)
    lp_gap = integrate(np.abs(g.values - values) ** p, measure)
    slope_g = slope_field(g, level_dist, scale, kind).values
    energy_excess = integrate(slope_g**p, measure) - target
    lp_ok = lp_gap <= eps
    energy_ok = energy_excess <= eps
    if not lp_ok and enforce_uniformity:
        raise InvariantError(
            f"Approximant misses f by {lp_gap:.6g} in L^p, above {eps:.6g}.",
            module="approximation",
            margin=eps - lp_gap,
        )

    if extension is not None:
        pool = np.asarray(selection.good_set, dtype=np.int64)
        excess = np.maximum(0.0, extension.slope_h**p - extension.slope_h_tilde**p)
        energy_deviation = integrate(excess, measure[pool]) / p
    else:
        energy_deviation = 0.0

    report = ApproxReport(
        level=level,
        anchor_level=patched.anchor_level if patched else level,
        uniformity_level=patched.uniformity_level if patched else level,
        p=p,
        eps=eps,
        eps_prime=eps_prime,
        scale=scale,
        kind=kind.value,
        lp_gap=lp_gap,
        energy_excess=energy_excess,
        lipschitz=lip_f,
        constant_c=5.0 * lip_f + 2.0 * eps_prime,
        bad_mass=selection.bad_mass,
        egorov_radius=selection.radius,
        partition_size=len(patched.local_levels) if patched else 0,
        patch_lipschitz=patched.lipschitz if patched else 0.0,
        extension_constant=extension.constant if extension else 0.0,
        slope_deviation=extension.slope_deviation if extension else 0.0,
        extension_energy_deviation=energy_deviation,
        retries=attempt,
        lp_ok=lp_ok,
        energy_ok=energy_ok,
        success=lp_ok and energy_ok,
        trivial=cutoff_empty,
    )
    return SlopeControlResult(level, g, report)
