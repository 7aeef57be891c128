import logging

import typer
from rich.logging import RichHandler

from src.experiments import commands

app = typer.Typer(
    name="fedbench",
    help="Federated learning simulation comparing server aggregation strategies.",
    no_args_is_help=True,
)
app.command()(commands.run)
app.command()(commands.validate)
app.command()(commands.summarize)


@app.callback()
def configure_logging(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log per-client detail")):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=verbose)],
        force=True,
    )


if __name__ == "__main__":
    app()
