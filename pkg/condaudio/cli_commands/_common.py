# Helpers shared by the command modules (skipped by command discovery).
from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import click

from condaudio import settings
from condaudio.config import RunConfig
from condaudio.errors import CondAudioError


def setup_logging() -> None:
    logging.basicConfig(level=settings.LOG_LEVEL, format=settings.LOG_FORMAT)


def fail(e: CondAudioError) -> None:
    click.echo(f"Error: {e}", err=True)
    raise SystemExit(e.exit_code)


def echo_run(run: RunConfig) -> None:
    """Every command states its resolved config and seed before doing work."""
    click.echo(f"run: {run.model_dump_json(exclude_none=True)}", err=True)


def parse_list(value: Optional[str], cast=str) -> Optional[List]:
    if value is None:
        return None
    try:
        return [cast(part.strip()) for part in value.split(",") if part.strip()]
    except ValueError as e:
        raise click.BadParameter(str(e)) from e


def run(command: click.Command, args: Optional[Sequence[str]] = None) -> None:
    """Invoke a click command with exit codes 0 ok, 1 usage, 2 data, 3 divergence."""
    setup_logging()
    try:
        rv = command.main(args=list(args) if args is not None else None, standalone_mode=False)
    except click.exceptions.Exit as e:
        raise SystemExit(e.exit_code)
    except click.ClickException as e:
        e.show()
        raise SystemExit(1)
    except click.Abort:
        click.echo("Aborted!", err=True)
        raise SystemExit(1)
    except CondAudioError as e:
        fail(e)
    raise SystemExit(rv if isinstance(rv, int) else 0)
