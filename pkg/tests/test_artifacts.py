"""Tests for CSV/JSON artifacts and the run manifest."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from mosco_lab.artifacts import (
    csv_text,
    format_value,
    json_text,
    read_distance_csv,
    read_vector_csv,
    write_csv,
    write_vector_csv,
)
from mosco_lab.errors import ArtifactIOError, MalformedInputError
from mosco_lab.manifest import RunManifest, check_complete


class TestFormatting:
    def test_values(self) -> None:
        assert format_value(0.1) == "0.10000000000000001"
        assert format_value(True) == "true"
        assert format_value(None) == ""
        assert format_value(np.float64(2.0)) == "2"
        assert format_value("limit") == "limit"

    def test_csv_text(self) -> None:
        text = csv_text(["level", "value"], [{"level": 1, "value": 0.5}, {"level": "limit"}])
        assert text == "level,value\n1,0.5\nlimit,\n"

    def test_json_text_is_sorted(self) -> None:
        assert json_text({"b": 1, "a": 2}) == '{\n  "a": 2,\n  "b": 1\n}\n'


class TestReading:
    def test_distance_matrix(self, tmp_path: Path) -> None:
        path = tmp_path / "d.csv"
        path.write_text("0,1\n\n1,0\n")
        np.testing.assert_array_equal(read_distance_csv(path), [[0, 1], [1, 0]])

    def test_non_square(self, tmp_path: Path) -> None:
        path = tmp_path / "d.csv"
        path.write_text("0,1,2\n1,0,1\n")
        with pytest.raises(MalformedInputError):
            read_distance_csv(path)

    def test_non_numeric_names_line(self, tmp_path: Path) -> None:
        path = tmp_path / "d.csv"
        path.write_text("0,1\n1,x\n")
        with pytest.raises(MalformedInputError) as excinfo:
            read_distance_csv(path)
        assert excinfo.value.details["line"] == 2

    def test_vector_length(self, tmp_path: Path) -> None:
        path = tmp_path / "m.csv"
        path.write_text("0.5\n0.5\n")
        assert list(read_vector_csv(path, 2)) == [0.5, 0.5]
        with pytest.raises(MalformedInputError):
            read_vector_csv(path, 3)

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ArtifactIOError) as excinfo:
            read_vector_csv(tmp_path / "none.csv")
        assert excinfo.value.suggestion is not None

    def test_invalid_utf8_is_malformed_input(self, tmp_path: Path) -> None:
        path = tmp_path / "d.csv"
        path.write_bytes(b"0,1\n1,\xff\n")
        with pytest.raises(MalformedInputError) as excinfo:
            read_distance_csv(path)
        assert excinfo.value.exit_code == 2
        assert excinfo.value.details["offset"] == 6


class TestWriting:
    def test_creates_parents_and_leaves_no_temp_files(self, tmp_path: Path) -> None:
        target = write_csv(tmp_path / "a" / "b.csv", ["x"], [{"x": 1}])
        assert target.read_text() == "x\n1\n"
        assert [p.name for p in target.parent.iterdir()] == ["b.csv"]

    def test_failed_rename_removes_temp_file(self, tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        def refuse(src: str, dst: object) -> None:
            raise PermissionError(13, "Permission denied")

        monkeypatch.setattr(os, "replace", refuse)
        with pytest.raises(ArtifactIOError):
            write_csv(tmp_path / "b.csv", ["x"], [{"x": 1}])
        assert list(tmp_path.iterdir()) == []

    def test_vector_round_trip(self, tmp_path: Path) -> None:
        values = np.array([0.1, -2.5, 1e-300])
        path = write_vector_csv(tmp_path / "g.csv", values)
        np.testing.assert_array_equal(read_vector_csv(path), values)


class TestManifest:
    def test_stage_timing_and_files(self, tmp_path: Path) -> None:
        manifest = RunManifest(version="0", experiment="energy", seed=0, config={})
        with manifest.stage("energy"):
            path = write_csv(tmp_path / "energy.csv", ["x"], [])
        manifest.add_files("energy", [path], tmp_path)
        assert manifest.files == {"energy": ["energy.csv"]}
        assert manifest.stages[0].name == "energy"
        check_complete(manifest, tmp_path)

    def test_missing_file_is_reported(self, tmp_path: Path) -> None:
        manifest = RunManifest(version="0", experiment="energy", seed=0, config={}, files={"energy": ["gone.csv"]})
        with pytest.raises(ArtifactIOError) as excinfo:
            check_complete(manifest, tmp_path)
        assert excinfo.value.details["key"] == "energy"
