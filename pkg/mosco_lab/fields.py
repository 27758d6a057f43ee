"""Value carriers shared by the numerical modules."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt

from mosco_lab.errors import MalformedInputError, ParameterError

FloatArray = npt.NDArray[np.float64]


class BallKind(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


def parse_ball_kind(value: str | BallKind) -> BallKind:
    if isinstance(value, BallKind):
        return value
    normalized = value.strip().lower()
    for kind in BallKind:
        if normalized == kind.value:
            return kind
    raise ParameterError(f"Invalid ball kind: {value!r}", field="kind")


def frozen_array(values: npt.ArrayLike) -> FloatArray:
    """Return a read-only float64 copy."""
    array = np.array(values, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ScalarField:
    """One real value per point of the ambient space."""

    values: FloatArray

    def __post_init__(self) -> None:
        array = frozen_array(self.values)
        if array.ndim != 1:
            raise MalformedInputError("Scalar field must be one-dimensional.", details={"shape": list(array.shape)})
        if not np.all(np.isfinite(array)):
            raise MalformedInputError("Scalar field contains non-finite values.")
        object.__setattr__(self, "values", array)

    @classmethod
    def of(cls, values: Sequence[float] | FloatArray) -> ScalarField:
        return cls(np.asarray(values, dtype=np.float64))

    @classmethod
    def zeros(cls, size: int) -> ScalarField:
        return cls(np.zeros(size))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.values))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self) else 0.0

    def __add__(self, other: ScalarField) -> ScalarField:
        return ScalarField(self.values + other.values)

    def __sub__(self, other: ScalarField) -> ScalarField:
        return ScalarField(self.values - other.values)

    def scaled(self, factor: float) -> ScalarField:
        return ScalarField(factor * self.values)

    def shifted(self, constant: float) -> ScalarField:
        return ScalarField(self.values + constant)


@dataclass(frozen=True)
class SlopeField:
    """Discrete asymptotic slope: local Lipschitz constants at a fixed scale."""

    scale: float
    kind: BallKind
    values: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", frozen_array(self.values))

    def __len__(self) -> int:
        return int(self.values.shape[0])


def integrate(density: FloatArray, measure: FloatArray) -> float:
    """Correctly rounded sum of density * measure."""
    return math.fsum((np.asarray(density, dtype=np.float64) * measure).tolist())
