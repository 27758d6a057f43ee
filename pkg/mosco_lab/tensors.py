"""Named metric-tensor generators for penalised Riemannian grid families.

A generator maps a grid point and a penalty ``eps`` to a symmetric
positive-definite matrix. Weights of non-horizontal directions grow as
``eps`` decreases, so shortest-path distances increase towards the
sub-Riemannian limit.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from typing import Any, Protocol

import numpy as np

from mosco_lab.errors import ParameterError, Suggestion
from mosco_lab.fields import FloatArray


class TensorGenerator(Protocol):
    def __call__(self, point: FloatArray, eps: float) -> FloatArray: ...


def identity_tensor(dim: int) -> TensorGenerator:
    eye = np.eye(dim)

    def generator(point: FloatArray, eps: float) -> FloatArray:
        del point, eps
        return eye

    return generator


def heisenberg_tensor() -> TensorGenerator:
    """dx^2 + dy^2 + eps^-2 (dz - (x dy - y dx)/2)^2 on R^3."""

    def generator(point: FloatArray, eps: float) -> FloatArray:
        x, y = float(point[0]), float(point[1])
        contact = np.array([y / 2.0, -x / 2.0, 1.0])
        horizontal = np.diag([1.0, 1.0, 0.0])
        return horizontal + np.outer(contact, contact) / (eps * eps)

    return generator


def grushin_tensor() -> TensorGenerator:
    """dx^2 + dy^2 / (x^2 + eps^2) on R^2 (horizontal fields d/dx and x d/dy)."""

    def generator(point: FloatArray, eps: float) -> FloatArray:
        x = float(point[0])
        return np.diag([1.0, 1.0 / (x * x + eps * eps)])

    return generator


_REGISTRY: dict[str, Callable[[int, Mapping[str, Any]], TensorGenerator]] = {
    "identity": lambda dim, params: identity_tensor(dim),
    "heisenberg": lambda dim, params: heisenberg_tensor(),
    "grushin": lambda dim, params: grushin_tensor(),
}

_REQUIRED_DIM = {"heisenberg": 3, "grushin": 2}


def tensor_names() -> list[str]:
    return sorted(_REGISTRY)


def resolve_tensor(name: str, dim: int, params: Mapping[str, Any] | None = None) -> TensorGenerator:
    factory = _REGISTRY.get(name)
    if factory is None:
        raise ParameterError(
            f"Unknown tensor generator: {name!r}",
            field="tensor",
            suggestion=Suggestion(
                action="choose a registered tensor",
                fix=f"Use one of: {', '.join(tensor_names())}.",
            ),
        )
    required = _REQUIRED_DIM.get(name)
    if required is not None and dim != required:
        raise ParameterError(
            f"Tensor {name!r} needs a {required}-dimensional grid, got {dim}.",
            field="dims",
        )
    return factory(dim, params or {})
