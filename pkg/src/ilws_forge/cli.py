"""Command line entry points: serve, replay, export-dataset, run."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click

from .config import load_config
from .errors import ForgeError


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Control plane for gated, versioned evolution of an agent's instruction state."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True, type=int)
def serve(config_path: Path, host: str, port: int) -> None:
    """Start the HTTP service (resumes from the audit log if one exists)."""
    from .service import run_server

    try:
        config = load_config(config_path)
    except ForgeError as exc:
        raise click.ClickException(str(exc))
    run_server(config, host=host, port=port)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--audit-dir", type=click.Path(exists=True, path_type=Path), required=True,
              help="Directory holding audit-*.ndjson files.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Write the replay summary JSON here.")
def replay(config_path: Path, audit_dir: Path, out_path: Path) -> None:
    """Re-derive commits, decisions, and budget from a recorded event log."""
    from .backbone import build_backbone
    from .loop import replay_events
    from .persistence import load_audit_events
    from .reflection import MockReflectionEngine

    try:
        config = load_config(config_path)
        events, truncated = load_audit_events(audit_dir)
        if truncated is not None:
            click.echo(f"warning: flagged a truncated trailing record ({len(truncated)} bytes)", err=True)
        loop = replay_events(events, config, MockReflectionEngine(), build_backbone(config.backbone))
    except ForgeError as exc:
        raise click.ClickException(str(exc))
    summary = {
        "events_replayed": len(events),
        "commits": len(loop.store.commits_in_order()),
        "decisions": len(loop.decisions),
        "budget": loop.budget.value,
        "serving_commit": loop.serving_commit,
        "state_hash": loop.serving_state.content_hash,
        "determinism_digest": loop.determinism_digest(),
    }
    text = json.dumps(summary, indent=2, sort_keys=True)
    if out_path is not None:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    click.echo(text)


@main.command("export-dataset")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--audit-dir", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--all/--since-last-distill", "export_all", default=False,
              help="Export every rated session instead of only those after the last distillation.")
def export_dataset_cmd(config_path: Path, audit_dir: Path, out_path: Path, export_all: bool) -> None:
    """Compile and export the rating-weighted dataset from a recorded log."""
    from .backbone import build_backbone
    from .distill import compile_dataset, export_dataset
    from .loop import replay_events
    from .persistence import load_audit_events
    from .reflection import MockReflectionEngine

    try:
        config = load_config(config_path)
        events, _ = load_audit_events(audit_dir)
        loop = replay_events(events, config, MockReflectionEngine(), build_backbone(config.backbone))
        sessions = [loop.sessions[sid] for sid in loop._session_order]
        if not export_all:
            sessions = [s for s in sessions if s.id not in loop._exported_sessions]
        rows = compile_dataset(sessions, None, loop.store)
        manifest = export_dataset(
            rows, Path(out_path),
            created_at=events[-1].at if events else 0.0,
            config_snapshot=config.as_payload(),
        )
    except ForgeError as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(manifest.as_dict(), indent=2, sort_keys=True))


@main.command()
@click.option("--scenario", "scenario_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--seed", type=int, default=None, help="Override the scenario file's seed.")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--http", "http_mode", is_flag=True, help="Drive the loop through the HTTP surface.")
def run(scenario_path: Path, seed: int, out_dir: Path, http_mode: bool) -> None:
    """Run a synthetic scenario and emit CSV + summary reports."""
    import time

    from .sim import Scenario, emit_report, run_scenario, run_scenario_http

    try:
        scenario = Scenario.from_file(scenario_path, seed_override=seed)
        started = time.perf_counter()
        if http_mode:
            report = run_scenario_http(scenario, out_dir=Path(out_dir))
        else:
            report = run_scenario(scenario, out_dir=Path(out_dir))
        elapsed = time.perf_counter() - started
        files = emit_report(report, Path(out_dir))
    except ForgeError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"scenario {scenario.name}: {report.accepted}/{report.n_candidates} accepted "
               f"(rate {report.acceptance_rate:.4f}) in {elapsed:.1f}s")
    for path in files:
        click.echo(f"  wrote {path}")


if __name__ == "__main__":
    main()
