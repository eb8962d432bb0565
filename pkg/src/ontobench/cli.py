"""Command-line entry point.

Exit codes are a stable contract: 0 success, 2 configuration/validation
error, 3 oracle/transport failure, 4 empty result.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import evalharness, runner, tagger, units
from .benchgen import load_benchmark
from .config import PipelineConfig
from .errors import EmptyResultError, OntobenchError, OracleError
from .pipeline import Requirement

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_EMPTY = 4


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, EmptyResultError):
        return EXIT_EMPTY
    if isinstance(exc, OracleError):
        return EXIT_ORACLE
    if isinstance(exc, (OntobenchError, FileNotFoundError, OSError)):
        return EXIT_CONFIG
    raise exc


def _guard(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = _exit_code(exc)
        click.echo(f"error: {exc}", err=True)
        sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Construct and evaluate custom science benchmarks."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_cfg(config_path: str) -> PipelineConfig:
    return PipelineConfig.load(config_path)


@main.command("select-units")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--recurse-after-moderate", is_flag=True, default=None,
              help="Also descend into children of selected units.")
def cmd_select_units(config_path: str, out_dir: str | None, recurse_after_moderate: bool | None):
    """Select knowledge units from the ontology graphs."""
    def body():
        cfg = _load_cfg(config_path)
        if recurse_after_moderate:
            cfg.params.recurse_after_moderate = True
        summary = runner.run_select_units(cfg, cfg.out_dir(out_dir))
        click.echo(json.dumps(summary, sort_keys=True))
    _guard(body)


@main.command("build-index")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path())
def cmd_build_index(config_path: str, out_dir: str | None):
    """Ingest the corpus and build the instance -> unit index."""
    def body():
        cfg = _load_cfg(config_path)
        summary = runner.run_build_index(cfg, cfg.out_dir(out_dir))
        click.echo(json.dumps(summary, sort_keys=True))
    _guard(body)


def _requirement_from_options(
    requirement: str | None, requirement_file: str | None, requirement_id: str
) -> Requirement:
    if (requirement is None) == (requirement_file is None):
        raise click.UsageError("provide exactly one of --requirement / --requirement-file")
    if requirement is not None:
        return Requirement(requirement_id=requirement_id, text=requirement)
    record = json.loads(Path(requirement_file).read_text(encoding="utf-8"))
    return Requirement(
        requirement_id=record.get("requirement_id", requirement_id),
        text=record["text"],
        description=record.get("description", ""),
    )


@main.command("build-benchmark")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--requirement", default=None, help="Requirement text.")
@click.option("--requirement-file", default=None, type=click.Path(),
              help="JSON file with requirement_id/text/description.")
@click.option("--requirement-id", default="requirement", show_default=True)
@click.option("--strategy", type=click.Choice(["binary-search", "greedy"]),
              default="binary-search", show_default=True)
@click.option("--k2", type=int, default=None, help="Override the subset size cap.")
@click.option("--trials", type=int, default=None, help="Override the trial count.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
def cmd_build_benchmark(
    config_path: str,
    out_dir: str | None,
    requirement: str | None,
    requirement_file: str | None,
    requirement_id: str,
    strategy: str,
    k2: int | None,
    trials: int | None,
    seed: int | None,
):
    """Resolve a requirement and build its benchmark end to end."""
    def body():
        cfg = _load_cfg(config_path)
        if k2 is not None:
            cfg.params.k2 = k2
        if trials is not None:
            cfg.params.trials = trials
        if seed is not None:
            cfg.params.seed = seed
        cfg.params.validate()
        req = _requirement_from_options(requirement, requirement_file, requirement_id)
        manifest = runner.run_build_benchmark(cfg, req, cfg.out_dir(out_dir), strategy)
        click.echo(json.dumps(manifest["stage_counts"], sort_keys=True))
    _guard(body)


@main.command("evaluate")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--benchmark", "benchmark_path", required=True, type=click.Path())
@click.option("--model", "model_names", multiple=True,
              help="Configured model name under oracles.models; repeatable.")
@click.option("--replies", "replies_specs", multiple=True,
              help="name=path of a recorded-replies file; repeatable.")
@click.option("--reference", "reference_path", default=None, type=click.Path(),
              help="Ground-truth accuracy file for a consistency report.")
def cmd_evaluate(
    config_path: str,
    out_dir: str | None,
    benchmark_path: str,
    model_names: tuple[str, ...],
    replies_specs: tuple[str, ...],
    reference_path: str | None,
):
    """Administer a benchmark to models and score accuracies."""
    def body():
        cfg = _load_cfg(config_path)
        out = cfg.out_dir(out_dir)
        benchmark = load_benchmark(benchmark_path)
        templates = cfg.prompt_library()
        runs: list[evalharness.ModelRun] = []
        available = cfg.model_oracles() if model_names else {}
        for name in model_names:
            if name not in available:
                raise click.UsageError(f"model {name!r} not configured under oracles.models")
            runs.append(
                evalharness.administer(benchmark, model=available[name], templates=templates)
            )
        for spec in replies_specs:
            name, _, path = spec.partition("=")
            if not path:
                raise click.UsageError("--replies expects name=path")
            replies = evalharness.load_replies(cfg.resolve(path))
            runs.append(
                evalharness.administer(benchmark, replies=replies, model_name=name)
            )
        if not runs:
            raise EmptyResultError("no models or replies files were given")
        accuracies = {run.model_name: run.accuracy for run in runs}
        acc_path = out / "accuracies.json"
        acc_path.write_text(
            json.dumps(accuracies, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        click.echo(json.dumps(accuracies, sort_keys=True))
        if reference_path:
            reference = evalharness.load_accuracies(reference_path)
            report = evalharness.consistency_report(runs, reference)
            evalharness.save_report(report, out / "ranking_report.json")
            click.echo(report.format_table())
    _guard(body)


@main.command("compare-rankings")
@click.option("--accuracies", "accuracies_path", required=True, type=click.Path())
@click.option("--reference", "reference_path", required=True, type=click.Path())
@click.option("--reference-name", default="reference", show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path())
def cmd_compare_rankings(
    accuracies_path: str, reference_path: str, reference_name: str, out_path: str | None
):
    """Rank-consistency report between two accuracy files."""
    def body():
        accuracies = evalharness.load_accuracies(accuracies_path)
        reference = evalharness.load_accuracies(reference_path)
        report = evalharness.consistency_report(
            accuracies, reference, reference_name=reference_name
        )
        if out_path:
            evalharness.save_report(report, out_path)
        click.echo(report.format_table())
    _guard(body)


@main.command("synth-tagger-data")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path())
@click.option("--count", type=int, required=True)
@click.option("--seed", type=int, default=None, help="Override the run seed.")
def cmd_synth_tagger_data(config_path: str, out_dir: str | None, count: int, seed: int | None):
    """Generate synthetic tagger training data."""
    def body():
        cfg = _load_cfg(config_path)
        use_seed = cfg.params.seed if seed is None else seed
        summary = runner.run_synth_tagger_data(cfg, count, use_seed, cfg.out_dir(out_dir))
        click.echo(json.dumps(summary, sort_keys=True))
    _guard(body)


@main.command("tag")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--query", required=True, help="Query text to tag.")
def cmd_tag(config_path: str, query: str):
    """Tag one query with knowledge units."""
    def body():
        cfg = _load_cfg(config_path)
        unit_set = units.load_unit_set(cfg.path("unit_file"))
        tag_fn, tagger_name = runner._make_tagger(cfg, unit_set)
        prediction = tag_fn(query, "adhoc")
        names = unit_set.names_by_id()
        click.echo(
            json.dumps(
                {
                    "tagger": tagger_name,
                    "units": sorted(prediction.units),
                    "names": [names.get(u, u) for u in sorted(prediction.units)],
                },
                sort_keys=True,
            )
        )
    _guard(body)


if __name__ == "__main__":
    main()
