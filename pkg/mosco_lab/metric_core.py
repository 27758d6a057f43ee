"""Finite metric measure spaces and monotone distance families."""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field
from scipy import sparse
from scipy.sparse import csgraph

from mosco_lab.errors import (
    DomainError,
    GeneratorError,
    InvariantError,
    MalformedInputError,
    MetricAxiomError,
    MonotonicityError,
    ParameterError,
    PointLookupError,
    PreconditionError,
    Suggestion,
)
from mosco_lab.fields import BallKind, FloatArray, frozen_array, parse_ball_kind
from mosco_lab.tensors import TensorGenerator

logger = logging.getLogger(__name__)

IntArray = npt.NDArray[np.int64]
PointRef = int | str

TRI_TOL = 1e-9
MONOTONE_SLACK = 1e-12

ViolationKind = Literal["asymmetry", "diagonal", "nonpositive", "triangle"]


class MetricViolation(BaseModel):
    """Worst offender of one axiom plus how many entries violate it."""

    kind: ViolationKind
    indices: list[int]
    magnitude: float
    count: int = Field(ge=1)


class MetricVerdict(BaseModel):
    ok: bool
    size: int
    violations: list[MetricViolation] = Field(default_factory=list)

    def kinds(self) -> list[str]:
        return [violation.kind for violation in self.violations]


def _as_square_matrix(dist: npt.ArrayLike) -> FloatArray:
    try:
        matrix = np.asarray(dist, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise MalformedInputError("Distance matrix is not numeric.") from exc
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise MalformedInputError(
            "Distance matrix must be square.",
            details={"shape": list(matrix.shape)},
        )
    if not np.all(np.isfinite(matrix)):
        raise MalformedInputError("Distance matrix contains non-finite entries.")
    return matrix


def validate_metric(dist: npt.ArrayLike) -> MetricVerdict:
    """List every metric-axiom violation of a square matrix.

    Triangle violations are reported as ``(x, z, y)`` with
    ``dist[x][z] > dist[x][y] + dist[y][z] + tol``.
    """

    matrix = _as_square_matrix(dist)
    n = matrix.shape[0]
    violations: list[MetricViolation] = []

    asymmetry = np.triu(np.abs(matrix - matrix.T), k=1)
    if np.any(asymmetry > 0):
        i, j = np.unravel_index(int(np.argmax(asymmetry)), asymmetry.shape)
        violations.append(MetricViolation(
            kind="asymmetry",
            indices=[int(i), int(j)],
            magnitude=float(asymmetry[i, j]),
            count=int(np.count_nonzero(asymmetry > 0)),
        ))

    diagonal = np.abs(np.diag(matrix))
    if np.any(diagonal != 0):
        i = int(np.argmax(diagonal))
        violations.append(MetricViolation(
            kind="diagonal",
            indices=[i],
            magnitude=float(diagonal[i]),
            count=int(np.count_nonzero(diagonal)),
        ))

    off_diagonal = ~np.eye(n, dtype=bool)
    nonpositive = off_diagonal & (matrix <= 0)
    if np.any(nonpositive):
        masked = np.where(nonpositive, matrix, np.inf)
        i, j = np.unravel_index(int(np.argmin(masked)), masked.shape)
        violations.append(MetricViolation(
            kind="nonpositive",
            indices=[int(i), int(j)],
            magnitude=float(-matrix[i, j]),
            count=int(np.count_nonzero(nonpositive)),
        ))

    scale = float(np.max(np.abs(matrix))) if n else 0.0
    tol = TRI_TOL * scale
    worst_excess = 0.0
    worst_triple: list[int] | None = None
    triangle_count = 0
    for y in range(n):
        excess = matrix - (matrix[:, y][:, None] + matrix[y, :][None, :])
        mask = excess > tol
        if not mask.any():
            continue
        triangle_count += int(np.count_nonzero(mask))
        flat = int(np.argmax(excess))
        x, z = np.unravel_index(flat, excess.shape)
        if excess[x, z] > worst_excess:
            worst_excess = float(excess[x, z])
            worst_triple = [int(x), int(z), y]
    if worst_triple is not None:
        violations.append(MetricViolation(
            kind="triangle",
            indices=worst_triple,
            magnitude=worst_excess,
            count=triangle_count,
        ))

    return MetricVerdict(ok=not violations, size=n, violations=violations)


def canonical_symmetric(matrix: FloatArray) -> FloatArray:
    """Mirror the strict upper triangle; the diagonal becomes zero."""
    upper = np.triu(matrix, k=1)
    return upper + upper.T


def ball_members(dist: FloatArray, center: int, radius: float, kind: BallKind) -> IntArray:
    row = dist[center]
    mask = row < radius if kind is BallKind.OPEN else row <= radius
    return np.flatnonzero(mask)


@dataclass(frozen=True, eq=False)
class MetricMeasureSpace:
    """Finite point set with a validated distance matrix and mass weights.

    Immutable after construction; arrays are read-only.
    """

    dist: FloatArray
    measure: FloatArray
    points: tuple[str, ...] = ()
    coords: FloatArray | None = None
    _index: dict[str, int] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        matrix = _as_square_matrix(self.dist)
        verdict = validate_metric(matrix)
        if not verdict.ok:
            first = verdict.violations[0]
            raise MetricAxiomError(
                f"Distance matrix violates the {first.kind} axiom at {first.indices}.",
                module="metric_core",
                margin=-first.magnitude,
                details={"verdict": verdict.model_dump()},
            )
        n = matrix.shape[0]
        if n == 0:
            raise ParameterError("A metric measure space needs at least one point.")

        measure = np.asarray(self.measure, dtype=np.float64)
        if measure.shape != (n,):
            raise MalformedInputError(
                f"Measure has shape {list(measure.shape)}, expected [{n}].",
                field="measure",
            )
        if not np.all(np.isfinite(measure)) or np.any(measure < 0):
            raise ParameterError("Measure weights must be finite and nonnegative.", field="measure")
        if float(measure.sum()) <= 0:
            raise ParameterError("Total mass must be positive.", field="measure")

        points = tuple(self.points) if self.points else tuple(str(i) for i in range(n))
        if len(points) != n:
            raise MalformedInputError(f"Got {len(points)} point labels for {n} points.", field="points")
        if len(set(points)) != n:
            raise MalformedInputError("Point labels must be unique.", field="points")

        coords = None
        if self.coords is not None:
            coords = frozen_array(self.coords)
            if coords.ndim != 2 or coords.shape[0] != n:
                raise MalformedInputError("Coordinates must be an N x k array.", field="coords")

        object.__setattr__(self, "dist", frozen_array(canonical_symmetric(matrix)))
        object.__setattr__(self, "measure", frozen_array(measure))
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "_index", {label: i for i, label in enumerate(points)})

    @property
    def size(self) -> int:
        return int(self.dist.shape[0])

    @property
    def total_mass(self) -> float:
        return float(self.measure.sum())

    def index_of(self, point: PointRef) -> int:
        if isinstance(point, (int, np.integer)) and not isinstance(point, bool):
            index = int(point)
            if 0 <= index < self.size:
                return index
        elif isinstance(point, str) and point in self._index:
            return self._index[point]
        raise PointLookupError(
            f"Unknown point id: {point!r}",
            details={"size": self.size},
            suggestion=Suggestion(action="use a known point", fix="Pass an index in [0, N) or a point label."),
        )

    def resolve(self, points: Sequence[PointRef]) -> tuple[int, ...]:
        return tuple(sorted({self.index_of(p) for p in points}))

    def with_distance(self, dist: npt.ArrayLike) -> MetricMeasureSpace:
        return MetricMeasureSpace(np.asarray(dist, dtype=np.float64), self.measure, self.points, self.coords)

    @cached_property
    def min_positive_distance(self) -> float:
        positive = self.dist[self.dist > 0]
        return float(positive.min()) if positive.size else float("inf")

    @cached_property
    def diameter(self) -> float:
        return float(self.dist.max())

    def median_nearest_neighbor(self) -> float:
        if self.size == 1:
            return 0.0
        masked = self.dist + np.diag(np.full(self.size, np.inf))
        return float(np.median(masked.min(axis=1)))

    def default_scale(self) -> float:
        """Working slope scale: twice the median nearest-neighbour distance."""
        scale = 2.0 * self.median_nearest_neighbor()
        return scale if scale > 0 else 1.0

    def mass_of(self, indices: Sequence[int] | IntArray) -> float:
        return float(self.measure[np.asarray(indices, dtype=np.int64)].sum()) if len(indices) else 0.0


@dataclass(frozen=True)
class Ball:
    center: str
    radius: float
    kind: BallKind
    members: tuple[str, ...]
    indices: tuple[int, ...]


def ball(space: MetricMeasureSpace, center: PointRef, radius: float, kind: BallKind | str = BallKind.OPEN) -> Ball:
    index = space.index_of(center)
    if radius < 0 or not np.isfinite(radius):
        raise ParameterError(f"Ball radius must be finite and >= 0, got {radius}.", field="radius")
    ball_kind = parse_ball_kind(kind)
    members = ball_members(space.dist, index, radius, ball_kind)
    return Ball(
        center=space.points[index],
        radius=float(radius),
        kind=ball_kind,
        members=tuple(space.points[i] for i in members),
        indices=tuple(int(i) for i in members),
    )


def snowflake_transform(space: MetricMeasureSpace | FloatArray, alpha: float) -> FloatArray:
    """Entrywise power d**alpha; a metric again whenever d <= 1."""

    dist = space.dist if isinstance(space, MetricMeasureSpace) else _as_square_matrix(space)
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"Snowflake exponent must lie in (0, 1], got {alpha}.", field="alpha")
    if dist.size and float(dist.max()) > 1.0:
        raise DomainError(
            "Snowflake distances need d <= 1.",
            details={"max_distance": float(dist.max())},
            suggestion=Suggestion(action="rescale", fix="Divide the distance matrix by its diameter."),
        )
    if alpha == 1.0:
        return np.array(dist, dtype=np.float64, copy=True)
    return np.power(dist, alpha)


class FamilyDirection(str, Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"


def _monotone_violation(
    lower: FloatArray, upper: FloatArray
) -> tuple[float, tuple[int, int]] | None:
    slack = MONOTONE_SLACK * np.maximum(np.abs(upper), np.abs(lower))
    excess = lower - upper - slack
    if not np.any(excess > 0):
        return None
    i, j = np.unravel_index(int(np.argmax(excess)), excess.shape)
    return float(lower[i, j] - upper[i, j]), (int(i), int(j))


@dataclass(frozen=True, eq=False)
class MonotoneDistanceFamily:
    """Distances d_1, ..., d_k on one point set, monotone towards ``base.dist``.

    Levels are numbered from 1. ``base`` carries the limit distance and the
    measure shared by every level.
    """

    base: MetricMeasureSpace
    levels: tuple[FloatArray, ...]
    direction: FamilyDirection = FamilyDirection.INCREASING
    _spaces: tuple[MetricMeasureSpace, ...] = field(default=(), init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.levels:
            raise ParameterError("A distance family needs at least one level.", field="levels")
        spaces = tuple(self.base.with_distance(level) for level in self.levels)
        chain = [space.dist for space in spaces] + [self.base.dist]
        names = [str(k) for k in range(1, len(spaces) + 1)] + ["limit"]
        for k in range(len(chain) - 1):
            lower, upper = chain[k], chain[k + 1]
            if self.direction is FamilyDirection.DECREASING:
                lower, upper = upper, lower
            found = _monotone_violation(lower, upper)
            if found is not None:
                gap, pair = found
                raise MonotonicityError(
                    f"Family is not {self.direction.value} between levels {names[k]} and {names[k + 1]} at pair {pair}.",
                    module="metric_core",
                    margin=-gap,
                    details={"levels": [names[k], names[k + 1]], "pair": list(pair)},
                )
        pattern = self.base.dist > 0
        for level, space in enumerate(spaces, start=1):
            if not np.array_equal(space.dist > 0, pattern):
                raise MonotonicityError(
                    f"Level {level} does not share the limit's positivity pattern.",
                    module="metric_core",
                    details={"level": level},
                )
        object.__setattr__(self, "levels", tuple(space.dist for space in spaces))
        object.__setattr__(self, "_spaces", spaces)

    @property
    def level_count(self) -> int:
        return len(self.levels)

    @property
    def size(self) -> int:
        return self.base.size

    def _check_level(self, level: int) -> int:
        if not 1 <= level <= self.level_count:
            raise ParameterError(
                f"Level {level} outside 1..{self.level_count}.",
                field="level",
            )
        return level - 1

    def level_distance(self, level: int) -> FloatArray:
        return self.levels[self._check_level(level)]

    def level_space(self, level: int) -> MetricMeasureSpace:
        return self._spaces[self._check_level(level)]

    @property
    def limit_distance(self) -> FloatArray:
        return self.base.dist

    def iter_levels(self, start: int = 1) -> Iterator[tuple[int, MetricMeasureSpace]]:
        for level in range(max(start, 1), self.level_count + 1):
            yield level, self._spaces[level - 1]

    def require_increasing(self, operation: str) -> None:
        if self.direction is not FamilyDirection.INCREASING:
            raise PreconditionError(
                f"{operation} needs distances increasing to the limit; family is {self.direction.value}.",
                field="family",
            )


def example_snowflake_alphas(count: int) -> list[float]:
    """alpha_i = 1 - 1/i for i = 2..count+1 (decreasing to the base distance)."""
    if count < 1:
        raise ParameterError("Schedule length must be >= 1.", field="count")
    return [1.0 - 1.0 / i for i in range(2, count + 2)]


def increasing_snowflake_alphas(count: int, limit_alpha: float) -> list[float]:
    """alpha_i = limit + (1 - limit)/i for i = 1..count; d_1 is the base distance."""
    if count < 1:
        raise ParameterError("Schedule length must be >= 1.", field="count")
    if not 0.0 < limit_alpha <= 1.0:
        raise ParameterError(f"Limit exponent must lie in (0, 1], got {limit_alpha}.", field="limit_alpha")
    return [limit_alpha + (1.0 - limit_alpha) / i for i in range(1, count + 1)]


def geometric_snowflake_alphas(count: int, limit_alpha: float, ratio: float = 0.1) -> list[float]:
    """alpha_k = limit + (1 - limit) * ratio**k for k = 1..count.

    The gap to the limit shrinks geometrically, so a short schedule reaches
    levels whose Lipschitz ratios d / d_k sit within rounding of 1.
    """
    if count < 1:
        raise ParameterError("Schedule length must be >= 1.", field="count")
    if not 0.0 < limit_alpha <= 1.0:
        raise ParameterError(f"Limit exponent must lie in (0, 1], got {limit_alpha}.", field="limit_alpha")
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"Ratio must lie in (0, 1), got {ratio}.", field="ratio")
    return [limit_alpha + (1.0 - limit_alpha) * ratio**k for k in range(1, count + 1)]


def snowflake_family(
    space: MetricMeasureSpace,
    alphas: Sequence[float],
    limit_alpha: float = 1.0,
    *,
    include_limit: bool = False,
) -> MonotoneDistanceFamily:
    """Levels d**alpha_i with limit d**limit_alpha (requires d <= 1)."""

    if not alphas:
        raise ParameterError("Snowflake schedule is empty.", field="alphas")
    limit = snowflake_transform(space, limit_alpha)
    levels = [snowflake_transform(space, alpha) for alpha in alphas]
    if include_limit:
        levels.append(limit)
    if all(alpha >= limit_alpha for alpha in alphas):
        direction = FamilyDirection.INCREASING
    elif all(alpha <= limit_alpha for alpha in alphas):
        direction = FamilyDirection.DECREASING
    else:
        raise ParameterError(
            "Snowflake exponents must all lie on one side of the limit exponent.",
            field="alphas",
        )
    return MonotoneDistanceFamily(space.with_distance(limit), tuple(levels), direction)


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, ...]
    step: float = 1.0
    diagonal: bool = False
    centered: bool = True

    def __post_init__(self) -> None:
        if not self.dims or any(n < 1 for n in self.dims):
            raise ParameterError(f"Grid dimensions must be positive, got {self.dims}.", field="dims")
        if not self.step > 0:
            raise ParameterError(f"Grid step must be positive, got {self.step}.", field="step")

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def coordinates(self) -> FloatArray:
        axes = []
        for n in self.dims:
            ticks = np.arange(n, dtype=np.float64)
            if self.centered:
                ticks = ticks - (n - 1) / 2.0
            axes.append(ticks * self.step)
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def labels(self) -> tuple[str, ...]:
        return tuple("g" + ".".join(str(c) for c in index) for index in np.ndindex(*self.dims))

    def edges(self) -> IntArray:
        """Undirected neighbour pairs, each listed once."""
        dim = len(self.dims)
        offsets = []
        for offset in itertools.product((-1, 0, 1), repeat=dim):
            nonzero = [c for c in offset if c != 0]
            if not nonzero or nonzero[0] != 1:
                continue
            if not self.diagonal and len(nonzero) != 1:
                continue
            offsets.append(offset)
        index = np.indices(self.dims).reshape(dim, -1).T
        pairs = []
        for offset in offsets:
            neighbour = index + np.asarray(offset)
            valid = np.all((neighbour >= 0) & (neighbour < np.asarray(self.dims)), axis=1)
            src = np.ravel_multi_index(index[valid].T, self.dims)
            dst = np.ravel_multi_index(neighbour[valid].T, self.dims)
            pairs.append(np.stack([src, dst], axis=1))
        if not pairs:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate(pairs).astype(np.int64)


def _point_tensors(coords: FloatArray, tensor: TensorGenerator, eps: float) -> FloatArray:
    tensors = np.stack([np.asarray(tensor(point, eps), dtype=np.float64) for point in coords])
    if not np.allclose(tensors, np.transpose(tensors, (0, 2, 1)), rtol=1e-12, atol=0.0):
        raise GeneratorError(f"Tensor generator returned a non-symmetric matrix at eps={eps}.")
    smallest = np.linalg.eigvalsh(tensors)[:, 0]
    if np.any(smallest <= 0):
        bad = int(np.argmax(smallest <= 0))
        raise GeneratorError(
            f"Tensor at point {bad} is not positive definite (eps={eps}).",
            details={"point": bad, "eps": eps, "min_eigenvalue": float(smallest[bad])},
        )
    return tensors


def edge_weights(coords: FloatArray, edges: IntArray, tensor: TensorGenerator, eps: float) -> FloatArray:
    """Edge length in the tensor averaged over both endpoints."""
    tensors = _point_tensors(coords, tensor, eps)
    averaged = (tensors[edges[:, 0]] + tensors[edges[:, 1]]) / 2.0
    step = coords[edges[:, 1]] - coords[edges[:, 0]]
    return np.sqrt(np.einsum("ei,eij,ej->e", step, averaged, step))


def shortest_path_metric(size: int, edges: IntArray, weights: FloatArray) -> FloatArray:
    graph = sparse.coo_matrix((weights, (edges[:, 0], edges[:, 1])), shape=(size, size)).tocsr()
    dist = csgraph.shortest_path(graph, method="D", directed=False)
    if not np.all(np.isfinite(dist)):
        raise MalformedInputError("Grid graph is disconnected.")
    return canonical_symmetric(dist)


def riemannian_grid_family(
    grid: GridSpec,
    tensor: TensorGenerator,
    penalties: Sequence[float],
    *,
    limit: FloatArray | None = None,
    measure: FloatArray | None = None,
) -> MonotoneDistanceFamily:
    """Shortest-path metrics of a grid graph under a penalised tensor schedule."""

    if not penalties:
        raise ParameterError("Penalty schedule is empty.", field="penalties")
    if any(eps <= 0 for eps in penalties):
        raise ParameterError("Penalties must be positive.", field="penalties")
    if any(b >= a for a, b in itertools.pairwise(penalties)):
        raise ParameterError("Penalties must be strictly decreasing.", field="penalties")

    coords = grid.coordinates()
    edges = grid.edges()
    weights = [edge_weights(coords, edges, tensor, eps) for eps in penalties]
    for k in range(1, len(weights)):
        shrink = weights[k - 1] - weights[k] - MONOTONE_SLACK * weights[k - 1]
        if np.any(shrink > 0):
            e = int(np.argmax(shrink))
            raise MonotonicityError(
                f"Edge {tuple(int(v) for v in edges[e])} shrinks between levels {k} and {k + 1}.",
                module="metric_core",
                margin=-float(weights[k - 1][e] - weights[k][e]),
                details={"edge": [int(v) for v in edges[e]], "levels": [k, k + 1]},
            )

    levels = tuple(shortest_path_metric(grid.size, edges, w) for w in weights)
    logger.debug("grid family: %d points, %d edges, %d levels", grid.size, len(edges), len(levels))
    limit_dist = levels[-1] if limit is None else np.asarray(limit, dtype=np.float64)
    mass = np.full(grid.size, 1.0 / grid.size) if measure is None else measure
    base = MetricMeasureSpace(limit_dist, mass, grid.labels(), coords)
    return MonotoneDistanceFamily(base, levels, FamilyDirection.INCREASING)


class ConvergenceGap(BaseModel):
    subset: list[int]
    gaps: list[float]
    final_gap: float


def uniform_convergence_gap(family: MonotoneDistanceFamily, subset: Sequence[PointRef]) -> ConvergenceGap:
    """sup over subset pairs of |d_limit - d_i|, per level."""

    if not subset:
        raise ParameterError("Subset must be nonempty.", field="subset")
    indices = np.asarray(family.base.resolve(subset), dtype=np.int64)
    block = np.ix_(indices, indices)
    limit = family.limit_distance[block]
    gaps = [float(np.max(np.abs(limit - level[block]))) for level in family.levels]
    slack = MONOTONE_SLACK * float(np.max(np.abs(limit))) if limit.size else 0.0
    for k in range(1, len(gaps)):
        if gaps[k] > gaps[k - 1] + slack:
            raise InvariantError(
                f"Convergence gap grows from level {k} to {k + 1}.",
                module="metric_core",
                margin=gaps[k - 1] - gaps[k],
            )
    return ConvergenceGap(subset=[int(i) for i in indices], gaps=gaps, final_gap=gaps[-1])


class ContinuityCheck(BaseModel):
    ok: bool
    worst_margin: float
    worst_quadruple: list[int] | None = None


def distance_continuity_check(dist: FloatArray, dist_prime: FloatArray) -> ContinuityCheck:
    """|d(x,y) - d(x',y')| <= d'(x,x') + d'(y,y') over all quadruples, for d <= d'."""

    d = _as_square_matrix(dist)
    dp = _as_square_matrix(dist_prime)
    if d.shape != dp.shape:
        raise PreconditionError("Distance matrices have different sizes.")
    found = _monotone_violation(d, dp)
    if found is not None:
        raise PreconditionError(
            f"d <= d' fails at pair {found[1]}.",
            details={"pair": list(found[1]), "excess": found[0]},
        )
    n = d.shape[0]
    tol = TRI_TOL * float(np.max(np.abs(dp))) if n else 0.0
    worst = np.inf
    worst_at: list[int] | None = None
    for x in range(n):
        for x_prime in range(n):
            lhs = np.abs(d[x, :][:, None] - d[x_prime, :][None, :])
            margin = dp[x, x_prime] + dp - lhs
            y, y_prime = np.unravel_index(int(np.argmin(margin)), margin.shape)
            if margin[y, y_prime] < worst:
                worst = float(margin[y, y_prime])
                worst_at = [x, int(y), x_prime, int(y_prime)]
    return ContinuityCheck(ok=worst >= -tol, worst_margin=float(worst), worst_quadruple=worst_at)


def topology_pattern_check(family: MonotoneDistanceFamily) -> list[bool]:
    pattern = family.limit_distance > 0
    return [bool(np.array_equal(level > 0, pattern)) for level in family.levels]
