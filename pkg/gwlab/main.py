"""
Main command-line entry point.

Builds the typer application, registers every command group and maps
errors to exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.
"""

from typing import List, Optional
import logging
import sys

import click
import typer

from gwlab.commands import analysis, play, training, world
from gwlab.core.config import settings
from gwlab.core.exceptions import GwLabError

# Configure logging; stdout is reserved for reports
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    stream=sys.stderr,
)

logger = logging.getLogger(__name__)

app = typer.Typer(
    name=settings.app_name,
    help="Desk-scale lab for the Oracle / Guesser / Questioner guessing game.",
    add_completion=False,
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)

# Register command groups
world.register(app)
training.register(app)
play.register(app)
analysis.register(app)


def dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Args:
        argv: Arguments without the program name; defaults to ``sys.argv[1:]``.

    Returns:
        Process exit code.
    """
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        result = app(args=args, prog_name=settings.app_name, standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 2
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except GwLabError as e:
        logger.debug(f"{type(e).__name__}: {str(e)}")
        click.echo(f"error: {str(e)}", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    raise SystemExit(dispatch())
