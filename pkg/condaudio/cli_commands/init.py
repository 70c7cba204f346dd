from __future__ import annotations

from importlib import resources
from pathlib import Path

import click

TEMPLATE_FILES = ["dataset.env", "toy.env"]

PACKAGE_TEMPLATES = "condaudio.templates"


def _copy_templates(target: Path, force: bool) -> int:
    created = 0
    for filename in TEMPLATE_FILES:
        dest_path = target / filename
        if dest_path.exists() and not force:
            click.echo(f"Skipping {filename}: already exists.")
            continue
        with resources.files(PACKAGE_TEMPLATES).joinpath(filename).open("r", encoding="utf-8") as src_file:
            dest_path.write_text(src_file.read(), encoding="utf-8")
        click.echo(f"Created {filename}")
        created += 1
    return created


@click.command(name="init")
@click.option("--dir", "target", default=".", type=click.Path(file_okay=False, path_type=Path),
              help="Where to write the config files (default: current directory).")
@click.option("--force", is_flag=True, help="Overwrite existing config files.")
def command(target: Path, force: bool):
    """Write starter dataset and toy-model config files (KEY=value, one per line)."""
    try:
        target.mkdir(parents=True, exist_ok=True)
        created = _copy_templates(target, force)
        click.echo(f"{created} config file(s) written to {target}")
    except OSError as e:
        click.echo(f"Error writing config files: {e}", err=True)
        raise SystemExit(2)
