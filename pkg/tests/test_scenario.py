"""Tests for scenario parsing, sweeps and the space/family/function builders."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np
import pytest

from mosco_lab.energy import EnergyBackend
from mosco_lab.errors import ConfigError, ParameterError
from mosco_lab.metric_core import FamilyDirection
from mosco_lab.scenario import (
    Experiment,
    build_family,
    build_function,
    build_space,
    energy_config,
    load_scenario,
    parse_scenario,
    read_scenario_table,
    sweep_points,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _table(**overrides: Any) -> dict[str, Any]:
    table: dict[str, Any] = {
        "experiment": "energy",
        "space": {"source": "interval", "points": 5},
    }
    table.update(overrides)
    return table


class TestParse:
    def test_minimal(self) -> None:
        config = parse_scenario(_table())
        assert config.experiment is Experiment.ENERGY
        assert config.seed == 0
        assert config.energy.backend is EnergyBackend.SLOPE

    def test_experiment_override(self) -> None:
        config = parse_scenario(_table(family={"kind": "snowflake"}), experiment="approx")
        assert config.experiment is Experiment.APPROX

    def test_unknown_key_is_named(self) -> None:
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(_table(energy={"p": 2.0, "radius": 0.1}))
        assert excinfo.value.details["key"] == "energy.radius"
        assert excinfo.value.exit_code == 2

    def test_union_tag_is_dropped_from_key(self) -> None:
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(_table(space={"source": "interval", "points": 0}))
        assert excinfo.value.details["key"] == "space.points"

    def test_bad_exponent(self) -> None:
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(_table(energy={"p": 1.0}))
        assert excinfo.value.field == "energy.p"

    def test_unknown_experiment(self) -> None:
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(_table(experiment="dance"))
        assert excinfo.value.details["key"] == "experiment"

    @pytest.mark.parametrize("experiment", ["approx", "mosco-liminf", "mosco-recovery", "hilbertianity"])
    def test_family_required(self, experiment: str) -> None:
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(_table(experiment=experiment))
        assert excinfo.value.details["key"] == "family"
        assert excinfo.value.suggestion is not None

    def test_snowflake_needs_radii(self) -> None:
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(_table(experiment="snowflake"))
        assert excinfo.value.details["key"] == "experiments.snowflake"

    def test_snowflake_radii_must_be_positive(self) -> None:
        with pytest.raises(ConfigError):
            parse_scenario(_table(experiment="snowflake", experiments={"snowflake": {"radii": [0.1, -0.2]}}))

    def test_riemannian_needs_grid(self) -> None:
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(_table(family={"kind": "riemannian", "penalties": [1.0]}))
        assert excinfo.value.details["key"] == "space.source"

    def test_empty_sweep_axis(self) -> None:
        with pytest.raises(ConfigError) as excinfo:
            parse_scenario(_table(sweep={"energy.p": []}))
        assert excinfo.value.details["key"] == "sweep.energy.p"

    def test_echo_uses_aliases(self) -> None:
        config = parse_scenario(_table(experiments={"validate": {"continuity": False}}))
        echoed = config.echo()
        assert echoed["experiments"]["validate"]["continuity"] is False
        assert "out" not in echoed


class TestFiles:
    def test_decode_error_reports_line(self, tmp_path: Path) -> None:
        path = tmp_path / "broken.toml"
        path.write_text('experiment = "energy"\n[space\n')
        with pytest.raises(ConfigError) as excinfo:
            read_scenario_table(path)
        assert excinfo.value.details["line"] == 2

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError):
            read_scenario_table(tmp_path / "absent.toml")

    @pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.toml")))
    def test_shipped_scenarios_parse(self, name: str) -> None:
        config = load_scenario(SCENARIOS / name)
        assert config.experiment in set(Experiment)


class TestSweep:
    def test_cartesian_product(self) -> None:
        table = _table(sweep={"energy.p": [1.5, 2.0], "energy.scale": [0.1, 0.2, 0.3]})
        points = list(sweep_points(table))
        assert len(points) == 6
        index, overrides, raw = points[4]
        assert index == 4
        assert overrides == {"energy.p": 2.0, "energy.scale": 0.2}
        assert raw["energy"] == {"p": 2.0, "scale": 0.2}
        assert "sweep" not in raw
        assert "sweep" in table

    def test_no_sweep_is_one_point(self) -> None:
        assert len(list(sweep_points(_table()))) == 1

    def test_key_crossing_a_value(self) -> None:
        table = _table(seed=1, sweep={"seed.value": [1]})
        with pytest.raises(ConfigError):
            list(sweep_points(table))


class TestBuilders:
    def test_interval(self, tmp_path: Path) -> None:
        config = parse_scenario(_table(space={"source": "interval", "points": 5, "length": 2.0}))
        space = build_space(config, tmp_path)
        assert space.size == 5
        assert space.dist[0, 4] == pytest.approx(2.0)
        assert space.total_mass == pytest.approx(1.0)

    def test_cloud_is_seeded_and_normalized(self, tmp_path: Path) -> None:
        config = parse_scenario(_table(seed=4, space={"source": "cloud", "points": 9}))
        first = build_space(config, tmp_path)
        second = build_space(config, tmp_path)
        assert np.array_equal(first.dist, second.dist)
        assert first.diameter == pytest.approx(1.0)

    def test_csv_space_and_family(self, tmp_path: Path) -> None:
        (tmp_path / "d.csv").write_text("0,1\n1,0\n")
        (tmp_path / "d1.csv").write_text("0,0.5\n0.5,0\n")
        (tmp_path / "m.csv").write_text("0.25\n0.75\n")
        config = parse_scenario(_table(
            experiment="approx",
            space={"source": "csv", "distances": "d.csv", "measure": "m.csv"},
            family={"kind": "csv", "levels": ["d1.csv"]},
        ))
        space = build_space(config, tmp_path)
        assert list(space.measure) == [0.25, 0.75]
        family = build_family(config, space, tmp_path)
        assert family is not None
        assert family.direction is FamilyDirection.INCREASING
        assert family.level_distance(1)[0, 1] == 0.5

    def test_snowflake_schedules(self, tmp_path: Path) -> None:
        example = parse_scenario(_table(family={"kind": "snowflake", "count": 3}))
        space = build_space(example, tmp_path)
        family = build_family(example, space, tmp_path)
        assert family is not None
        assert family.direction is FamilyDirection.DECREASING
        assert family.level_count == 3

        increasing = parse_scenario(_table(family={"kind": "snowflake", "schedule": "increasing", "count": 3}))
        family = build_family(increasing, space, tmp_path)
        assert family is not None
        assert family.direction is FamilyDirection.INCREASING
        assert family.level_count == 4
        assert np.array_equal(family.level_distance(4), family.limit_distance)

        geometric = parse_scenario(_table(family={"kind": "snowflake", "schedule": "geometric", "count": 3, "ratio": 0.01}))
        family = build_family(geometric, space, tmp_path)
        assert family is not None
        assert family.direction is FamilyDirection.INCREASING
        assert family.level_count == 4
        expected = space.dist ** 0.505
        np.testing.assert_allclose(family.level_distance(1), expected, rtol=1e-12)

    def test_riemannian(self, tmp_path: Path) -> None:
        config = parse_scenario(_table(
            space={"source": "grid", "dims": [3, 3]},
            family={"kind": "riemannian", "tensor": "grushin", "penalties": [1.0, 0.5]},
        ))
        space = build_space(config, tmp_path)
        family = build_family(config, space, tmp_path)
        assert family is not None
        assert family.level_count == 2
        assert space.points[0].startswith("g")

    def test_riemannian_dimension_mismatch(self, tmp_path: Path) -> None:
        config = parse_scenario(_table(
            space={"source": "grid", "dims": [3, 3]},
            family={"kind": "riemannian", "tensor": "heisenberg", "penalties": [1.0]},
        ))
        with pytest.raises(ParameterError):
            build_family(config, build_space(config, tmp_path), tmp_path)

    def test_functions(self, tmp_path: Path) -> None:
        config = parse_scenario(_table(function={"kind": "distance", "center": 1, "clamp": 0.3}))
        space = build_space(config, tmp_path)
        np.testing.assert_allclose(build_function(config, space, tmp_path).values, [0.25, 0, 0.25, 0.3, 0.3])

        coordinate = parse_scenario(_table(function={"kind": "coordinate"}))
        np.testing.assert_allclose(build_function(coordinate, space, tmp_path).values, np.linspace(0, 1, 5))

        constant = parse_scenario(_table(function={"kind": "constant", "value": 2.5}))
        assert set(build_function(constant, space, tmp_path).values) == {2.5}

        random = parse_scenario(_table(seed=3, function={"kind": "random"}))
        assert np.array_equal(
            build_function(random, space, tmp_path).values,
            np.random.default_rng(3).standard_normal(5),
        )

    def test_coordinate_needs_axis(self, tmp_path: Path) -> None:
        config = parse_scenario(_table(function={"kind": "coordinate", "axis": 1}))
        with pytest.raises(ParameterError):
            build_function(config, build_space(config, tmp_path), tmp_path)

    def test_csv_function_needs_path(self, tmp_path: Path) -> None:
        config = parse_scenario(_table(function={"kind": "csv"}))
        with pytest.raises(ConfigError):
            build_function(config, build_space(config, tmp_path), tmp_path)

    def test_energy_defaults_to_space_scale(self, tmp_path: Path) -> None:
        config = parse_scenario(_table())
        space = build_space(config, tmp_path)
        assert energy_config(config, space).scale == pytest.approx(0.5)
