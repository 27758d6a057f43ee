"""mosco-lab command line: ``run`` one scenario or ``sweep`` its parameter grid."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

import click
import typer
from rich.console import Console

from mosco_lab import __version__, artifacts
from mosco_lab.config import LabSettings, configure_logging
from mosco_lab.envelope import Envelope, EnvelopeMeta
from mosco_lab.errors import ConfigError, InternalError, LabError
from mosco_lab.experiments import ExperimentOutput, RunContext, run_experiment
from mosco_lab.manifest import MANIFEST_NAME, RunManifest, SweepPoint, check_complete
from mosco_lab.scenario import ScenarioConfig, parse_scenario, read_scenario_table, sweep_points

logger = logging.getLogger(__name__)

TOOL_NAME = "mosco-lab"
FAILURE_NAME = "failure.json"

app = typer.Typer(
    name=TOOL_NAME,
    help="Cheeger energies and Mosco convergence on finite metric measure spaces.",
    no_args_is_help=True,
    add_completion=False,
)


def _duration_ms(start: float) -> int:
    return max(0, int((time.perf_counter() - start) * 1000))


def _emit(envelope: Envelope) -> None:
    click.echo(artifacts.json_text(envelope.model_dump()).rstrip("\n"))


def _handle_error(error: LabError, start: float, target: Path | None, experiment: str | None) -> None:
    if target is not None:
        try:
            artifacts.write_json(target / FAILURE_NAME, {"error": error.to_dict(), "experiment": experiment})
        except LabError:
            logger.warning("could not write %s into %s", FAILURE_NAME, target)
    meta = EnvelopeMeta(tool=TOOL_NAME, version=__version__, duration_ms=_duration_ms(start))
    _emit(Envelope(ok=False, error=error.to_dict(), meta=meta))
    console = Console(stderr=True)
    console.print(f"[bold red]Error:[/bold red] {error.message}")
    if error.suggestion:
        console.print(f"[yellow]Suggestion:[/yellow] {error.suggestion.fix}")


def _settings(out: Path | None, threads: int | None) -> LabSettings:
    settings = LabSettings({"out": str(out) if out else None, "threads": threads})
    configure_logging(settings.log_level)
    return settings


def _output_dir(out: Path | None, scenario: ScenarioConfig | None, settings: LabSettings) -> Path:
    if out is not None:
        return out
    if scenario is not None and scenario.out:
        return Path(scenario.out)
    return Path(str(settings.get("out")))


def _single(scenario: ScenarioConfig, base_dir: Path, out_dir: Path) -> ExperimentOutput:
    return run_experiment(RunContext(scenario, out_dir, base_dir))


def _flat_scalars(summary: dict[str, Any]) -> dict[str, Any]:
    return {key: value for key, value in summary.items() if isinstance(value, (int, float, str, bool)) or value is None}


def _run(
    config: Path,
    out: Path | None,
    seed: int | None,
    threads: int | None,
    experiment: str | None,
    *,
    sweep: bool,
) -> None:
    start = time.perf_counter()
    target: Path | None = out
    selector = experiment
    try:
        settings = _settings(out, threads)
        target = _output_dir(out, None, settings)
        table = read_scenario_table(config)
        if seed is not None:
            table["seed"] = seed
        scenario = parse_scenario(table, experiment=experiment)
        selector = scenario.experiment.value
        target = _output_dir(out, scenario, settings)
        base_dir = config.parent
        manifest = RunManifest(
            version=__version__,
            experiment=selector,
            seed=scenario.seed,
            config=scenario.echo(),
        )

        warnings: list[str] = []
        if not sweep:
            with manifest.stage(selector):
                output = _single(scenario, base_dir, target)
            manifest.add_files(selector, output.files, target)
            manifest.summary = output.summary
            warnings.extend(output.warnings)
        else:
            if not scenario.sweep:
                raise ConfigError("Scenario has no [sweep] table.", field="sweep", details={"key": "sweep"})
            points = []
            for index, overrides, raw in sweep_points(table):
                point = parse_scenario(raw, experiment=experiment)
                points.append((index, overrides, point, target / f"point-{index:03d}"))

            def execute(item: tuple[int, dict[str, Any], ScenarioConfig, Path]) -> ExperimentOutput:
                _, _, point, directory = item
                return _single(point, base_dir, directory)

            with manifest.stage("sweep"), ThreadPoolExecutor(max_workers=settings.threads) as pool:
                outputs = list(pool.map(execute, points))
            manifest.sweep = []
            rows = []
            for (index, overrides, _, directory), output in zip(points, outputs):
                key = directory.name
                manifest.add_files(key, output.files, target)
                manifest.sweep.append(SweepPoint(
                    index=index, overrides=overrides, directory=key, summary=output.summary
                ))
                rows.append({"index": index, **overrides, **_flat_scalars(output.summary)})
                warnings.extend(f"{key}: {note}" for note in output.warnings)
            columns: list[str] = ["index", *scenario.sweep]
            for row in rows:
                columns.extend(key for key in row if key not in columns)
            summary_path = artifacts.write_csv(target / "sweep.csv", columns, rows)
            manifest.add_files("sweep", [summary_path], target)
            manifest.summary = {"points": len(points)}

        check_complete(manifest, target)
        artifacts.write_json(target / MANIFEST_NAME, manifest.model_dump(mode="json"))
        meta = EnvelopeMeta(
            tool=TOOL_NAME, version=__version__, duration_ms=_duration_ms(start), warnings=warnings
        )
        result = {"manifest": str(target / MANIFEST_NAME), "summary": manifest.summary, "files": manifest.files}
        _emit(Envelope(ok=True, result=result, meta=meta))
    except LabError as error:
        _handle_error(error, start, target, selector)
        raise typer.Exit(code=error.exit_code) from error
    except Exception as exc:
        logger.debug("unexpected failure", exc_info=True)
        wrapped = InternalError(f"{type(exc).__name__}: {exc}")
        _handle_error(wrapped, start, target, selector)
        raise typer.Exit(code=wrapped.exit_code) from exc


CONFIG_OPTION = typer.Option(..., "--config", "-c", help="Scenario TOML file.")
OUT_OPTION = typer.Option(None, "--out", "-o", help="Output directory.")
SEED_OPTION = typer.Option(None, "--seed", min=0, help="Seed overriding the scenario's.")
THREADS_OPTION = typer.Option(None, "--threads", help="Worker threads (0 = one per CPU).")
EXPERIMENT_OPTION = typer.Option(None, "--experiment", "-e", help="Experiment overriding the scenario's selector.")


@app.command()
def run(
    config: Path = CONFIG_OPTION,
    out: Path | None = OUT_OPTION,
    seed: int | None = SEED_OPTION,
    threads: int | None = THREADS_OPTION,
    experiment: str | None = EXPERIMENT_OPTION,
) -> None:
    """Run the scenario's experiment and write its outputs plus a manifest."""
    _run(config, out, seed, threads, experiment, sweep=False)


@app.command()
def sweep(
    config: Path = CONFIG_OPTION,
    out: Path | None = OUT_OPTION,
    seed: int | None = SEED_OPTION,
    threads: int | None = THREADS_OPTION,
    experiment: str | None = EXPERIMENT_OPTION,
) -> None:
    """Run one experiment per point of the scenario's [sweep] grid."""
    _run(config, out, seed, threads, experiment, sweep=True)


def main() -> None:
    app()
