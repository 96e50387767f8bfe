"""Command-line interface: thin client over the pipeline service.

Stage commands run in-process by default; pass ``--server`` to target a
running service over HTTP instead.  Backend credentials come only from
environment variables named in the run config.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import httpx

from . import __version__, annotation, pipeline
from .pipeline import ChatBackendSpec, RunConfig


def _stage_options(f):
    f = click.option("--force", is_flag=True, help="re-run even when up to date")(f)
    f = click.option("--server", default=None, help="base URL of a running service")(f)
    f = click.option("--seed", type=int, default=None)(f)
    f = click.option("--stage-dir", type=click.Path(path_type=Path), default=None)(f)
    f = click.option(
        "--config", "config_path", required=True, type=click.Path(exists=True, path_type=Path)
    )(f)
    return f


def _apply_overrides(
    config: RunConfig,
    *,
    stage_dir: Path | None,
    seed: int | None,
    judge_endpoint: str | None = None,
    baseline: str | None = None,
    baseline_file: Path | None = None,
    candidates_file: Path | None = None,
) -> RunConfig:
    updates: dict = {}
    if stage_dir is not None:
        updates["stage_dir"] = stage_dir
    if seed is not None:
        updates["seed"] = seed
    if baseline is not None:
        updates["baseline"] = baseline
    if baseline_file is not None:
        updates["baseline_file"] = baseline_file
    if candidates_file is not None:
        updates["candidates_file"] = candidates_file
    if judge_endpoint is not None:
        updates["backends"] = config.backends.model_copy(
            update={"judge": ChatBackendSpec(kind="http", url=judge_endpoint)}
        )
    return config.model_copy(update=updates) if updates else config


def _invoke(stage: str, config: RunConfig, server: str | None, force: bool) -> None:
    if server:
        body = {"config": config.model_dump(mode="json"), "force": force}
        response = httpx.post(f"{server}/api/runs/{stage}", json=body, timeout=None)
        if response.status_code >= 400:
            raise click.ClickException(f"{response.status_code}: {response.text}")
        data = response.json()
        status, summary = data["status"], data["summary"]
    else:
        try:
            result = pipeline.run_stage(config, stage, force=force)
        except pipeline.PipelineError as exc:
            raise click.ClickException(str(exc))
        status = "skipped" if result.skipped else "completed"
        summary = result.summary
    details = " ".join(f"{k}={v}" for k, v in summary.items())
    click.echo(f"{stage}: {status} {details}".rstrip())


@click.group()
@click.version_option(__version__)
@click.option("--verbose", is_flag=True)
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )


@main.command()
@_stage_options
def preprocess(config_path, stage_dir, seed, server, force):
    """Parse, dedup, and stat the word-sense dataset."""
    config = _apply_overrides(pipeline.load_config(config_path), stage_dir=stage_dir, seed=seed)
    _invoke("preprocess", config, server, force)


@main.command()
@_stage_options
def generate(config_path, stage_dir, seed, server, force):
    """Generate candidate sentences for every word sense."""
    config = _apply_overrides(pipeline.load_config(config_path), stage_dir=stage_dir, seed=seed)
    _invoke("generate", config, server, force)


@main.command()
@_stage_options
def score(config_path, stage_dir, seed, server, force):
    """Score candidates with the masked LM and pick one per sense."""
    config = _apply_overrides(pipeline.load_config(config_path), stage_dir=stage_dir, seed=seed)
    _invoke("score", config, server, force)


@main.command()
@_stage_options
@click.option("--judge-endpoint", default=None, help="HTTP judge backend URL")
@click.option("--baseline", type=click.Choice(["first", "random", "file"]), default=None)
@click.option("--baseline-file", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--candidates-file", type=click.Path(exists=True, path_type=Path), default=None)
def evaluate(
    config_path, stage_dir, seed, server, force,
    judge_endpoint, baseline, baseline_file, candidates_file,
):
    """Judge selected sentences against baseline sentences, blinded."""
    config = _apply_overrides(
        pipeline.load_config(config_path),
        stage_dir=stage_dir,
        seed=seed,
        judge_endpoint=judge_endpoint,
        baseline=baseline,
        baseline_file=baseline_file,
        candidates_file=candidates_file,
    )
    _invoke("evaluate", config, server, force)


@main.command()
@_stage_options
def report(config_path, stage_dir, seed, server, force):
    """Aggregate win rate, length, and readability into the run report."""
    config = _apply_overrides(pipeline.load_config(config_path), stage_dir=stage_dir, seed=seed)
    _invoke("report", config, server, force)


@main.command("annotate-serve")
@click.option("--stage-dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@click.option("--ui-dir", type=click.Path(path_type=Path), default=None)
@click.option("--create", is_flag=True, help="create a session from the stage artifacts first")
@click.option("--seed", type=int, default=None, help="seed for --create")
@click.option("--size", type=int, default=None, help="sample size for --create")
def annotate_serve(stage_dir: Path, host: str, port: int, ui_dir, create: bool, seed, size):
    """Serve the annotation API (and UI bundle, when built) for this run."""
    import uvicorn

    from .service import create_app

    if create:
        if seed is None:
            raise click.ClickException("--create requires --seed")
        store = annotation.create_annotation_session(
            stage_dir / "senses.jsonl",
            stage_dir / "selections.jsonl",
            seed,
            root=stage_dir,
            sample_size=size,
        )
        click.echo(f"session {store.session_id} created with {len(store.pairs)} pairs")
    app = create_app(stage_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command("annotate-export")
@click.option("--stage-dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--session", "session_id", default=None, help="defaults to the only session")
@click.option("--output", type=click.Path(path_type=Path), default=None)
def annotate_export(stage_dir: Path, session_id: str | None, output: Path | None):
    """Export consensus human labels from an annotation session."""
    sessions = annotation.list_sessions(stage_dir)
    if session_id is None:
        if len(sessions) != 1:
            raise click.ClickException(
                f"found {len(sessions)} sessions, pick one with --session: {sessions}"
            )
        session_id = sessions[0]
    try:
        store = annotation.open_session(stage_dir, session_id)
    except annotation.UnknownSession:
        raise click.ClickException(f"unknown session {session_id}")
    result = store.consensus()
    lines = "".join(
        json.dumps({"pair_id": pid, "label": label}) + "\n" for pid, label in result.kept
    )
    if output is not None:
        output.write_text(lines, encoding="utf-8")
        click.echo(f"wrote {len(result.kept)} labels to {output}")
    else:
        click.echo(lines, nl=False)
    click.echo(
        f"agreement={result.agreement:.4f} kept={len(result.kept)}"
        f" fully_annotated={result.fully_annotated} under_annotated={result.under_annotated}",
        err=True,
    )


if __name__ == "__main__":
    main()
