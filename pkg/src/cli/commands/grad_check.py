"""
Gradient Check Command
"""
from typing import Tuple

import click
from rich.table import Table

from ...exceptions import NumericError
from ...services.verification import GradCheckSuite
from ..common import make_console


@click.command("grad-check")
@click.option("--only", "only", multiple=True, help="Run just the named check (repeatable)")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed of the random operands")
def grad_check_command(only: Tuple[str, ...], seed: int):
    """Compare every backward rule and composite loss with 64-bit central differences"""
    results = GradCheckSuite(seed=seed).run(only=list(only) or None)

    table = Table(title="gradient check")
    table.add_column("check", no_wrap=True)
    table.add_column("max_rel_err", justify="right")
    table.add_column("tolerance", justify="right")
    table.add_column("status")
    for result in results:
        table.add_row(result.name, f"{result.max_rel_err:.3e}", f"{result.tolerance:.0e}",
                      "ok" if result.passed else "FAIL")
    make_console().print(table)

    failed = [r.name for r in results if not r.passed]
    if failed:
        click.echo(f"Gradient check failed: {', '.join(failed)}", err=True)
        raise click.exceptions.Exit(NumericError.exit_code)
    click.echo(f"{len(results)} checks passed")
