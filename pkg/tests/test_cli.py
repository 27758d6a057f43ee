"""End-to-end tests for the ``mosco-lab`` command line."""

from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path
from typing import Any

import pytest
from typer.testing import CliRunner

from mosco_lab.cli import app

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _envelope(output: str) -> dict[str, Any]:
    """Decode the JSON envelope; stderr lines may surround it."""
    lines = output.splitlines(keepends=True)
    start = next(i for i, line in enumerate(lines) if line.startswith("{"))
    payload, _ = json.JSONDecoder().raw_decode("".join(lines[start:]))
    return payload


def _points(output: str) -> int:
    return int(_envelope(output)["result"]["summary"]["points"])


def _csv_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def _write(directory: Path, name: str, text: str) -> Path:
    path = directory / name
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def two_point_scenario(tmp_path: Path) -> Path:
    _write(tmp_path, "d.csv", "0,1\n1,0\n")
    return _write(tmp_path, "scenario.toml", 'experiment = "validate"\n[space]\nsource = "csv"\ndistances = "d.csv"\n')


@pytest.fixture
def energy_scenario(tmp_path: Path) -> Path:
    return _write(
        tmp_path,
        "energy.toml",
        "\n".join([
            'experiment = "energy"',
            "seed = 5",
            "[space]",
            'source = "cloud"',
            "points = 10",
            "[function]",
            'kind = "distance"',
            "[sweep]",
            '"energy.p" = [1.5, 2.0]',
            '"energy.scale" = [0.1, 0.2, 0.3]',
            "",
        ]),
    )


class TestRun:
    def test_validate_two_point(self, runner: CliRunner, two_point_scenario: Path, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(two_point_scenario), "-o", str(out)])
        assert result.exit_code == 0, result.output
        envelope = _envelope(result.output)
        assert envelope["ok"] is True
        assert envelope["error"] is None
        assert envelope["meta"]["tool"] == "mosco-lab"
        assert envelope["meta"]["warnings"] == []
        assert envelope["result"]["summary"] == {"ok": True, "size": 2}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["files"]["validate"] == ["validation.json"]
        assert manifest["stages"][0]["name"] == "validate"
        validation = json.loads((out / "validation.json").read_text())
        assert validation["space"]["violations"] == []

    def test_metric_violation_exits_3(self, runner: CliRunner, tmp_path: Path) -> None:
        _write(tmp_path, "d.csv", "0,3,1\n3,0,1\n1,1,0\n")
        config = _write(tmp_path, "s.toml", 'experiment = "validate"\n[space]\nsource = "csv"\ndistances = "d.csv"\n')
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(config), "-o", str(out)])
        assert result.exit_code == 3
        envelope = _envelope(result.output)
        assert envelope["ok"] is False
        assert envelope["error"]["code"] == "E3001"
        failure = json.loads((out / "failure.json").read_text())
        assert failure["experiment"] == "validate"
        assert failure["error"]["category"] == "invariant"

    def test_bad_config_exits_2(self, runner: CliRunner, tmp_path: Path) -> None:
        config = _write(tmp_path, "s.toml", 'experiment = "energy"\n[space]\nsource = "interval"\npoints = 4\n[energy]\np = 0.5\n')
        result = runner.invoke(app, ["run", "-c", str(config), "-o", str(tmp_path / "out")])
        assert result.exit_code == 2
        envelope = _envelope(result.output)
        assert envelope["error"]["field"] == "energy.p"
        assert "Error:" in result.output

    def test_missing_family_suggests_fix(self, runner: CliRunner, tmp_path: Path) -> None:
        config = _write(tmp_path, "s.toml", 'experiment = "approx"\n[space]\nsource = "interval"\npoints = 4\n')
        result = runner.invoke(app, ["run", "-c", str(config), "-o", str(tmp_path / "out")])
        assert result.exit_code == 2
        assert "Suggestion:" in result.output

    def test_missing_csv_exits_4(self, runner: CliRunner, tmp_path: Path) -> None:
        config = _write(tmp_path, "s.toml", 'experiment = "validate"\n[space]\nsource = "csv"\ndistances = "nope.csv"\n')
        result = runner.invoke(app, ["run", "-c", str(config), "-o", str(tmp_path / "out")])
        assert result.exit_code == 4
        assert _envelope(result.output)["error"]["category"] == "io"

    def test_undecodable_csv_exits_2(self, runner: CliRunner, tmp_path: Path) -> None:
        (tmp_path / "d.csv").write_bytes(b"0,1\n1,\xff\n")
        config = _write(tmp_path, "s.toml", 'experiment = "validate"\n[space]\nsource = "csv"\ndistances = "d.csv"\n')
        result = runner.invoke(app, ["run", "-c", str(config), "-o", str(tmp_path / "out")])
        assert result.exit_code == 2
        assert _envelope(result.output)["error"]["code"] == "E1001"

    def test_missing_scenario_exits_2(self, runner: CliRunner, tmp_path: Path) -> None:
        result = runner.invoke(app, ["run", "-c", str(tmp_path / "absent.toml"), "-o", str(tmp_path / "out")])
        assert result.exit_code == 2

    def test_seed_and_experiment_overrides(self, runner: CliRunner, energy_scenario: Path, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(
            app, ["run", "-c", str(energy_scenario), "-o", str(out), "--seed", "9", "-e", "validate"]
        )
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 9
        assert manifest["experiment"] == "validate"
        assert manifest["config"]["seed"] == 9

    def test_energy_outputs(self, runner: CliRunner, energy_scenario: Path, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(energy_scenario), "-o", str(out)])
        assert result.exit_code == 0, result.output
        rows = _csv_rows(out / "energy.csv")
        assert {row["backend"] for row in rows} == {"slope", "graph-dirichlet"}
        assert {row["level"] for row in rows} == {"limit"}
        assert len(_csv_rows(out / "slopes.csv")) == 10
        assert set(json.loads((out / "manifest.json").read_text())["files"]["energy"]) == {
            "energy.csv", "slopes.csv", "energy.json",
        }


class TestSweep:
    def test_grid_of_six(self, runner: CliRunner, energy_scenario: Path, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["sweep", "-c", str(energy_scenario), "-o", str(out)])
        assert result.exit_code == 0, result.output
        rows = _csv_rows(out / "sweep.csv")
        assert len(rows) == 6
        assert [row["index"] for row in rows] == [str(i) for i in range(6)]
        assert {(float(row["energy.p"]), float(row["energy.scale"])) for row in rows} == {
            (p, s) for p in (1.5, 2.0) for s in (0.1, 0.2, 0.3)
        }
        for index in range(6):
            assert (out / f"point-{index:03d}" / "energy.csv").is_file()
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["sweep"]) == 6
        assert _points(result.output) == 6

    def test_threads_do_not_change_results(self, runner: CliRunner, energy_scenario: Path, tmp_path: Path) -> None:
        serial, parallel = tmp_path / "serial", tmp_path / "parallel"
        assert runner.invoke(app, ["sweep", "-c", str(energy_scenario), "-o", str(serial)]).exit_code == 0
        assert runner.invoke(
            app, ["sweep", "-c", str(energy_scenario), "-o", str(parallel), "--threads", "2"]
        ).exit_code == 0
        assert (serial / "sweep.csv").read_text() == (parallel / "sweep.csv").read_text()
        for index in range(6):
            name = f"point-{index:03d}/energy.csv"
            assert (serial / name).read_text() == (parallel / name).read_text()

    def test_point_warnings_reach_envelope(self, runner: CliRunner, tmp_path: Path) -> None:
        scenario = _write(
            tmp_path,
            "narrow.toml",
            "\n".join([
                'experiment = "snowflake"',
                "[space]",
                'source = "interval"',
                "points = 16",
                "[function]",
                'kind = "coordinate"',
                "[experiments.snowflake]",
                "levels = [2]",
                "radii = [0.125, 0.25]",
                "[sweep]",
                '"energy.p" = [1.5, 2.0]',
                "",
            ]),
        )
        result = runner.invoke(app, ["sweep", "-c", str(scenario), "-o", str(tmp_path / "out")])
        assert result.exit_code == 0, result.output
        warnings = _envelope(result.output)["meta"]["warnings"]
        assert [note.split(":")[0] for note in warnings] == ["point-000", "point-001"]
        assert all("less than a decade" in note for note in warnings)

    def test_sweep_needs_grid(self, runner: CliRunner, two_point_scenario: Path, tmp_path: Path) -> None:
        result = runner.invoke(app, ["sweep", "-c", str(two_point_scenario), "-o", str(tmp_path / "out")])
        assert result.exit_code == 2
        assert _envelope(result.output)["error"]["field"] == "sweep"


class TestShippedScenarios:
    def test_snowflake_table(self, runner: CliRunner, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(SCENARIOS / "snowflake_interval.toml"), "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert len(_csv_rows(out / "snowflake.csv")) == 45
        fits = _csv_rows(out / "snowflake_fits.csv")
        assert [row["level"] for row in fits] == ["2", "3", "4"]
        warnings = _envelope(result.output)["meta"]["warnings"]
        assert len(warnings) == 1
        assert warnings[0].startswith("snowflake: radius grid spans less than a decade")

    def test_two_point_validate(self, runner: CliRunner, tmp_path: Path) -> None:
        workdir = tmp_path / "scenarios"
        shutil.copytree(SCENARIOS, workdir)
        result = runner.invoke(app, ["run", "-c", str(workdir / "two_point.toml"), "-o", str(tmp_path / "out")])
        assert result.exit_code == 0, result.output

    @pytest.mark.slow
    def test_snowflake_recovery_has_four_blocks(self, runner: CliRunner, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(SCENARIOS / "snowflake_recovery.toml"), "-o", str(out)])
        assert result.exit_code == 0, result.output
        envelope = _envelope(result.output)
        summary = envelope["result"]["summary"]
        assert len(summary["reindex"]) == 4
        assert summary["reindex"] == sorted(set(summary["reindex"]))
        assert summary["truncated"] is False
        assert summary["ok"] is True
        assert not any(note.startswith("recovery: schedule truncated") for note in envelope["meta"]["warnings"])
        report = json.loads((out / "recovery.json").read_text())["report"]
        assert report["limsup_margin"] + report["limsup_tolerance"] >= 0

    @pytest.mark.slow
    def test_heisenberg_hilbertianity(self, runner: CliRunner, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(SCENARIOS / "heisenberg_hilbertianity.toml"), "-o", str(out)])
        assert result.exit_code == 0, result.output
        rows = _csv_rows(out / "hilbertianity.csv")
        assert [row["level"] for row in rows] == ["1", "2", "3", "limit"]
        assert all(row["hilbertian"] == "true" for row in rows)


class TestFamilyExperiments:
    @pytest.fixture
    def family_scenario(self, tmp_path: Path) -> Path:
        return _write(
            tmp_path,
            "family.toml",
            "\n".join([
                'experiment = "mosco-liminf"',
                "seed = 2",
                "[space]",
                'source = "cloud"',
                "points = 10",
                "[family]",
                'kind = "snowflake"',
                'schedule = "increasing"',
                "count = 3",
                "[energy]",
                "scale = 0.4",
                "[function]",
                'kind = "distance"',
                "clamp = 0.5",
                "[experiments.liminf]",
                'sequence = "bump"',
                "bump_point = 3",
                "[experiments.recovery]",
                "schedule = 2",
                "[experiments.hilbertianity]",
                "trials = 5",
                "",
            ]),
        )

    def test_liminf(self, runner: CliRunner, family_scenario: Path, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(family_scenario), "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert len(_csv_rows(out / "liminf.csv")) == 4
        assert _envelope(result.output)["result"]["summary"]["ok"] is True

    def test_recovery_truncation_is_a_warning(self, runner: CliRunner, family_scenario: Path, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(family_scenario), "-o", str(out), "-e", "mosco-recovery"])
        assert result.exit_code == 0, result.output
        envelope = _envelope(result.output)
        assert envelope["result"]["summary"]["truncated"] is True
        assert "recovery: schedule truncated after 1 of 2 blocks" in envelope["meta"]["warnings"]

    def test_validate_reports_family(self, runner: CliRunner, family_scenario: Path, tmp_path: Path) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(family_scenario), "-o", str(out), "-e", "validate"])
        assert result.exit_code == 0, result.output
        validation = json.loads((out / "validation.json").read_text())
        assert validation["direction"] == "increasing"
        assert validation["topology"] == [True] * 4
        assert all(check["ok"] for check in validation["continuity"])

    def test_hilbertianity_slope_is_report_only(
        self, runner: CliRunner, family_scenario: Path, tmp_path: Path
    ) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(family_scenario), "-o", str(out), "-e", "hilbertianity"])
        assert result.exit_code == 0, result.output
        assert _envelope(result.output)["result"]["summary"]["asserted"] is False

    def test_energy_with_family_reports_margins(
        self, runner: CliRunner, family_scenario: Path, tmp_path: Path
    ) -> None:
        out = tmp_path / "out"
        result = runner.invoke(app, ["run", "-c", str(family_scenario), "-o", str(out), "-e", "energy"])
        assert result.exit_code == 0, result.output
        rows = [row for row in _csv_rows(out / "energy.csv") if row["backend"] == "slope"]
        assert [row["level"] for row in rows] == ["1", "2", "3", "4", "limit"]
        assert all(float(row["margin"]) >= 0 for row in rows if row["level"] != "limit")
