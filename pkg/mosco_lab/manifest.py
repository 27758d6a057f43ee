"""Run manifest: config echo, produced files and stage timings."""

from __future__ import annotations

import time
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field

from mosco_lab.errors import ArtifactIOError

MANIFEST_NAME = "manifest.json"


class StageTiming(BaseModel):
    name: str
    duration_ms: int = Field(ge=0)


class SweepPoint(BaseModel):
    index: int
    overrides: dict[str, Any]
    directory: str
    summary: dict[str, Any]


class RunManifest(BaseModel):
    tool: str = "mosco-lab"
    version: str
    experiment: str
    seed: int
    config: dict[str, Any]
    files: dict[str, list[str]] = Field(default_factory=dict)
    stages: list[StageTiming] = Field(default_factory=list)
    summary: dict[str, Any] = Field(default_factory=dict)
    sweep: list[SweepPoint] | None = None

    def add_files(self, key: str, paths: list[Path], root: Path) -> None:
        self.files[key] = [path.relative_to(root).as_posix() for path in paths]

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            duration_ms = max(0, int((time.perf_counter() - start) * 1000))
            self.stages.append(StageTiming(name=name, duration_ms=duration_ms))


def check_complete(manifest: RunManifest, root: Path) -> None:
    """Every listed file must exist and be non-empty."""
    for key, names in manifest.files.items():
        for name in names:
            path = root / name
            if not path.is_file() or path.stat().st_size == 0:
                raise ArtifactIOError(
                    f"Manifest entry '{key}' lists missing or empty file {name}.",
                    details={"key": key, "path": str(path)},
                )
