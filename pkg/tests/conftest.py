"""Shared fixtures for mosco-lab tests."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform
from typer.testing import CliRunner

from mosco_lab.metric_core import MetricMeasureSpace


@pytest.fixture
def runner() -> CliRunner:
    """Provide a CLI test runner."""
    return CliRunner()


@pytest.fixture
def two_point() -> MetricMeasureSpace:
    """d(a, b) = 1 with unit masses."""
    return MetricMeasureSpace(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([1.0, 1.0]), ("a", "b"))


@pytest.fixture
def three_point_line() -> MetricMeasureSpace:
    coords = np.array([[0.0], [1.0], [2.0]])
    return MetricMeasureSpace(np.abs(coords - coords.T), np.ones(3), coords=coords)


@pytest.fixture
def unit_interval() -> MetricMeasureSpace:
    """64 equispaced points of [0, 1] with uniform mass."""
    coords = np.linspace(0.0, 1.0, 64)[:, None]
    return MetricMeasureSpace(np.abs(coords - coords.T), np.full(64, 1.0 / 64), coords=coords)


RandomSpace = Callable[..., MetricMeasureSpace]


@pytest.fixture
def random_space() -> RandomSpace:
    """Factory for random Euclidean clouds rescaled to diameter 1."""

    def build(size: int, seed: int, dim: int = 2) -> MetricMeasureSpace:
        rng = np.random.default_rng(seed)
        coords = rng.random((size, dim))
        dist = squareform(pdist(coords))
        dist /= dist.max()
        measure = rng.uniform(0.5, 1.5, size) / size
        return MetricMeasureSpace(dist, measure)

    return build
