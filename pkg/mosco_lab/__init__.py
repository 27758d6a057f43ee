"""mosco-lab: Cheeger energies and Mosco convergence on finite metric measure spaces."""

from __future__ import annotations

from mosco_lab.energy import (
    EnergyBackend,
    EnergyConfig,
    EnergyReport,
    asymptotic_energy,
    cheeger_energy,
    sobolev_norm,
)
from mosco_lab.errors import (
    InputError,
    InvariantError,
    LabError,
)
from mosco_lab.fields import BallKind, ScalarField, SlopeField
from mosco_lab.metric_core import (
    MetricMeasureSpace,
    MonotoneDistanceFamily,
    ball,
    riemannian_grid_family,
    snowflake_family,
    snowflake_transform,
    validate_metric,
)

__version__ = "0.1.0"

__all__ = [
    "BallKind",
    "EnergyBackend",
    "EnergyConfig",
    "EnergyReport",
    "InputError",
    "InvariantError",
    "LabError",
    "MetricMeasureSpace",
    "MonotoneDistanceFamily",
    "ScalarField",
    "SlopeField",
    "__version__",
    "asymptotic_energy",
    "ball",
    "cheeger_energy",
    "riemannian_grid_family",
    "snowflake_family",
    "snowflake_transform",
    "sobolev_norm",
    "validate_metric",
]
