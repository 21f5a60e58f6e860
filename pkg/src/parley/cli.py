"""Command-line operator surface.

Exit codes: 0 success, 2 configuration error, 3 runtime failure,
4 validation failure.
"""

from __future__ import annotations

import sys

import click

from .agents import ChatModelClient, load_roster
from .catalog import BUILTIN_SCENARIOS, load_catalog, validate_scenario
from .errors import (
    ArtifactMismatchError,
    ConfigurationError,
    NotFoundError,
    ParleyError,
    PrerequisiteError,
    SchemaError,
)
from .pipeline import Pipeline, load_config
from .tournament import TournamentState, TranscriptStore, build_schedule, read_checkpoint

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VALIDATION = 4


def _fail(exc: ParleyError) -> None:
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, (SchemaError, ConfigurationError, NotFoundError, PrerequisiteError)):
        sys.exit(EXIT_CONFIG)
    if isinstance(exc, ArtifactMismatchError):
        sys.exit(EXIT_VALIDATION)
    sys.exit(EXIT_RUNTIME)


def _pipeline(config_path: str) -> Pipeline:
    config = load_config(config_path)
    client = None
    backend = config.backend_defaults
    if backend.get("endpoint"):
        client = ChatModelClient(api_key=backend.get("api_key", ""))
    return Pipeline(config, client=client)


@click.group()
def main():
    """Round-robin negotiation tournaments and their analysis pipeline."""


@main.command()
@click.argument("source", required=False)
def catalog(source):
    """List built-in scenarios, or validate scenario files at SOURCE."""
    try:
        specs = load_catalog(source)
    except ParleyError as exc:
        _fail(exc)
    for spec in specs:
        violations = validate_scenario(spec)
        shape = (
            f"{len(spec.issues)} issues" if spec.kind == "integrative" else "price only"
        )
        status = "ok" if not violations else "INVALID: " + "; ".join(violations)
        click.echo(f"{spec.scenario_id:<12} {spec.kind:<13} {shape:<10} {status}")
    if source is None:
        click.echo(f"\nbuilt-ins: {', '.join(BUILTIN_SCENARIOS)}")


@main.group()
def roster():
    """Roster file operations."""


@roster.command("validate")
@click.argument("path")
def roster_validate(path):
    """Check a roster file parses and every backend binding is legal."""
    try:
        agents = load_roster(path)
    except ParleyError as exc:
        _fail(exc)
    for agent in agents:
        kind = agent.backend.kind
        detail = (
            agent.backend.policy_name if kind == "scripted" else agent.backend.model_name
        )
        click.echo(f"{agent.agent_id:<20} {kind:<11} {detail}")
    click.echo(f"{len(agents)} agents ok")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--stages", default="run", help="comma-separated subset of: run,score,features,style,analyze,report")
def run(config_path, stages):
    """Execute pipeline stages in dependency order."""
    try:
        pipeline = _pipeline(config_path)
        pipeline.run_stages([s.strip() for s in stages.split(",") if s.strip()])
    except ParleyError as exc:
        _fail(exc)
    click.echo("done")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def resume(config_path):
    """Resume an interrupted tournament from its checkpoint."""
    try:
        pipeline = _pipeline(config_path)
        report = pipeline.stage_run()
    except ParleyError as exc:
        _fail(exc)
    click.echo(
        f"scheduled={report.scheduled} executed={report.executed} "
        f"skipped={report.skipped} failed={report.failed}"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def status(config_path):
    """Report schedule progress without executing anything."""
    try:
        config = load_config(config_path)
        pipeline = Pipeline(config)
        schedule = build_schedule(
            pipeline.roster, list(pipeline.scenarios.keys()), config.base_seed
        )
        state = TournamentState(roster=pipeline.roster, schedule=schedule)
        read_checkpoint(config.checkpoint_path, state)
        if pipeline.transcripts_path.exists():
            state.completed |= TranscriptStore(pipeline.transcripts_path).ids
        pending = state.pending(pipeline.scenarios)
    except ParleyError as exc:
        _fail(exc)
    click.echo(
        f"scheduled={len(schedule)} completed={len(state.completed)} "
        f"failed={len(state.failed)} pending={len(pending)}"
    )


def _single_stage(config_path: str, stage: str) -> None:
    try:
        pipeline = _pipeline(config_path)
        pipeline.run_stages([stage])
    except ParleyError as exc:
        _fail(exc)
    click.echo(f"{stage}: done")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def score(config_path):
    """Extract agreements and write the outcome table."""
    _single_stage(config_path, "score")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def features(config_path):
    """Extract linguistic features and write the feature table."""
    _single_stage(config_path, "features")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def style(config_path):
    """Produce the per-agent warmth/dominance table."""
    _single_stage(config_path, "style")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def analyze(config_path):
    """Fit the regression suite over the outcome and style tables."""
    _single_stage(config_path, "analyze")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def report(config_path):
    """Write per-agent summaries and ranking-stability tables."""
    _single_stage(config_path, "report")


if __name__ == "__main__":
    main()
