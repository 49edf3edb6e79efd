"""Command-line entry points.

Exit codes: 0 success, 3 validation/format problems, 4 solver
non-convergence, 5 I/O failures.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from .collate import relative_energy_report
from .exceptions import ConvergenceError, FormatError, ValidationError
from .pipeline import (
    collate_stage,
    conformer_report,
    fragment_stage,
    load_config,
    run_pipeline,
    solve_stage,
)

EXIT_VALIDATION = 3
EXIT_CONVERGENCE = 4
EXIT_IO = 5


def _mapped_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValidationError, FormatError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except ConvergenceError as exc:
            click.echo(f"solver did not converge: {exc}", err=True)
            sys.exit(EXIT_CONVERGENCE)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


@click.group()
def main():
    """Fragment-embedded configuration interaction pipeline."""


config_option = click.option(
    "--config", "config_path", required=True, type=click.Path(exists=True),
    help="JSON pipeline configuration.",
)


@main.command()
@config_option
@_mapped_errors
def fragment(config_path):
    """Build clusters, write FCIDUMPs and the run manifest."""
    cfg = load_config(config_path)
    manifest = fragment_stage(cfg)
    click.echo(f"fragmented into {len(manifest.clusters)} clusters under {cfg.workdir}")
    for rec in manifest.clusters:
        click.echo(f"  {rec.cluster_id}: {rec.mo_count} MOs -> {rec.solver}")


@main.command()
@config_option
@_mapped_errors
def solve(config_path):
    """Solve every cluster in the manifest (resumes from checkpoints)."""
    cfg = load_config(config_path)
    results, reused = solve_stage(cfg)
    click.echo(f"solved {len(results)} clusters ({reused} reused from checkpoints)")
    for r in results:
        click.echo(f"  {r.cluster_id} [{r.solver}] E = {r.energy:.10f}")


@main.command()
@config_option
@_mapped_errors
def collate(config_path):
    """Collate solved clusters into the total energy and run report."""
    cfg = load_config(config_path)
    results, _ = solve_stage(cfg)
    summary = collate_stage(cfg, results)
    click.echo(f"E_total({summary['conformer']}) = {summary['e_total']:.10f}")


@main.command()
@config_option
@_mapped_errors
def run(config_path):
    """Full pipeline: fragment, solve, collate, report."""
    cfg = load_config(config_path)
    summary = run_pipeline(cfg)
    click.echo(f"E_total({summary['conformer']}) = {summary['e_total']:.10f}")
    click.echo(f"report written to {Path(cfg.workdir) / 'report.txt'}")


@main.command()
@click.option("--summary-a", required=True, type=click.Path(exists=True))
@click.option("--summary-b", required=True, type=click.Path(exists=True))
@click.option("--output", "-o", type=click.Path(), default=None)
@click.option("--method", default="embedded-ci")
@_mapped_errors
def report(summary_a, summary_b, output, method):
    """Relative-energy table for two completed runs."""
    try:
        a = json.loads(Path(summary_a).read_text())
        b = json.loads(Path(summary_b).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"run summary is not valid JSON: {exc}") from exc
    table = conformer_report(a, b, method=method)
    text = table.to_text()
    if output:
        Path(output).write_text(text)
    click.echo(text, nl=False)


@main.command("delta")
@click.argument("e_a", type=float)
@click.argument("e_b", type=float)
@click.option("--label-a", default="A")
@click.option("--label-b", default="B")
@_mapped_errors
def delta(e_a, e_b, label_a, label_b):
    """Relative energy (kcal/mol) of two total energies in hartree."""
    table = relative_energy_report(e_a, e_b, labels=(label_a, label_b))
    click.echo(table.to_text(), nl=False)


if __name__ == "__main__":
    main()
