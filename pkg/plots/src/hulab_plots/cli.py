"""CLI: ``plots render --spec fig.toml``."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from hulab_plots.render import FigureInputError, FigureSpec, render


@click.group(name="plots")
def cli():
    """Render figures from hulab CSV outputs."""


@cli.command("render")
@click.option("--spec", "spec_path", type=click.Path(exists=True, path_type=Path),
              required=True, help="TOML figure spec.")
def render_cmd(spec_path):
    """Render the figure described by a TOML spec file."""
    spec = FigureSpec.from_toml(spec_path)
    out = render(spec)
    click.echo(f"wrote {out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except FigureInputError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except click.ClickException as exc:
        exc.show()
        return 2


if __name__ == "__main__":
    sys.exit(main())
