"""
Shared CLI options and terminal output
"""
import sys
from pathlib import Path

import click
from rich.console import Console

PIPED_WIDTH = 160

config_option = click.option(
    "--config", "config_path", default=None,
    type=click.Path(exists=False, dir_okay=False, path_type=Path),
    help="YAML run configuration (defaults to configs/default.toy.yaml)",
)


def make_console() -> Console:
    """Console on the current stdout; wide when piped so table rows stay on one line"""
    if sys.stdout.isatty():
        return Console(file=sys.stdout)
    return Console(file=sys.stdout, width=PIPED_WIDTH, no_color=True)
