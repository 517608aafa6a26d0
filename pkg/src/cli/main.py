"""
Command-Line Interface
refcon: data generation, training, evaluation, gradient checks and prediction
"""
from typing import Optional

import click
import structlog

from .. import __version__
from ..exceptions import ConfigError, RefconError
from ..logging_config import configure_logging
from ..settings import apply_thread_limit, load_environment
from .commands.data import gen_data
from .commands.evaluate import evaluate_command
from .commands.grad_check import grad_check_command
from .commands.predict import predict_command
from .commands.train import train

logger = structlog.get_logger(__name__)

USAGE_EXIT_CODE = ConfigError.exit_code


class RefconGroup(click.Group):
    """Maps toolkit errors to their exit codes and usage errors to 1"""

    def make_context(self, *args, **kwargs):
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as e:
            e.exit_code = USAGE_EXIT_CODE
            raise

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = USAGE_EXIT_CODE
            raise
        except RefconError as e:
            logger.debug("Command failed", error=type(e).__name__)
            click.echo(f"Error: {e}", err=True)
            raise click.exceptions.Exit(e.exit_code)


@click.group(name="refcon", cls=RefconGroup)
@click.version_option(__version__, prog_name="refcon")
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (default REFCON_LOG_LEVEL or INFO)")
@click.option("--log-format", type=click.Choice(["console", "json"]), default=None,
              help="Log renderer (default REFCON_LOG_FORMAT or console)")
def cli(log_level: Optional[str], log_format: Optional[str]):
    """Referring segmentation with cross-modal contrastive learning, at toy scale"""
    load_environment()
    configure_logging(level=log_level, fmt=log_format)
    apply_thread_limit()


cli.add_command(gen_data)
cli.add_command(train)
cli.add_command(evaluate_command)
cli.add_command(grad_check_command)
cli.add_command(predict_command)


def main() -> None:
    cli(prog_name="refcon")


if __name__ == "__main__":
    main()
