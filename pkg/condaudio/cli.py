# Top-level CLI menu: discover commands under condaudio.cli_commands
import pkgutil
from importlib import import_module
from typing import Optional, Sequence

import click

from condaudio.cli_commands._common import run

cli = click.Group(help="Controllable text-to-audio toolkit: condition extraction, toy LDM, evaluation")


def _load_commands():
    import condaudio.cli_commands as commands_pkg

    for _finder, name, _ispkg in pkgutil.iter_modules(commands_pkg.__path__):
        if name.startswith("_"):
            continue
        mod = import_module(f"condaudio.cli_commands.{name}")
        cmd = getattr(mod, "command", None)
        if isinstance(cmd, click.Command):
            cli.add_command(cmd)


_load_commands()


def main(args: Optional[Sequence[str]] = None):
    run(cli, args)


if __name__ == "__main__":
    main()
