"""Command-line interface: generate | transform | analyze | pipeline | verify.

Exit codes: 0 ok, 1 usage error, 2 runtime error, 3 verification failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import toml

from hulab import __version__
from hulab.core import RngStream, TorusBox, allowed_wavevectors, read_sample_csv, write_sample_csv
from hulab.generators import GeneratorSpec, generate
from hulab.pipeline import PipelineConfig, apply_transports, run_pipeline, run_verification
from hulab.spectral import (
    scattering_intensity,
    variance_curve,
    write_radial_csv,
    write_spectrum_csv,
    write_variance_csv,
)


class VerificationFailure(click.ClickException):
    exit_code = 3


@click.group(name="hulab")
@click.version_option(version=__version__)
def cli():
    """Point-process transports and hyperuniformity statistics on a torus."""


@cli.command("generate")
@click.option("--model", required=True,
              type=click.Choice(["poisson", "binomial", "lattice", "cloaked_lattice",
                                 "matern2", "phip"]))
@click.option("--intensity", type=float, default=1.0, show_default=True)
@click.option("--side", type=float, required=True)
@click.option("--dim", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stream", type=int, default=0, show_default=True)
@click.option("--n", type=int, default=None, help="Fixed point count (binomial).")
@click.option("--r-h", type=float, default=None, help="Hardcore radius (matern2).")
@click.option("--line-intensity", type=float, default=None, help="Line intensity (phip).")
@click.option("--stationarize/--no-stationarize", default=True, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("sample.csv"),
              show_default=True)
def generate_cmd(model, intensity, side, dim, seed, stream, n, r_h, line_intensity,
                 stationarize, out):
    """Draw one sample and write it as CSV + JSON manifest."""
    extra = {}
    if n is not None:
        extra["n"] = n
    if r_h is not None:
        extra["r_h"] = r_h
    if line_intensity is not None:
        extra["line_intensity"] = line_intensity
    if model == "lattice":
        extra["stationarize"] = stationarize
    spec = GeneratorSpec(kind=model, intensity=intensity, extra=extra)
    box = TorusBox(dim=dim, side=side)
    rng = RngStream(seed, stream).generator()
    sample = generate(spec, box, rng, rng_label=(seed, stream))
    write_sample_csv(sample, out)
    click.echo(f"wrote {out} ({len(sample)} points)")


@cli.command("transform")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              required=True, help="TOML file with a [[transports]] list.")
@click.option("--in", "in_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--stream", type=int, default=0, show_default=True)
def transform_cmd(config_path, in_path, out, seed, stream):
    """Apply a transport chain from a config file to an existing sample."""
    steps = toml.loads(config_path.read_text()).get("transports", [])
    if not steps:
        raise click.UsageError(f"{config_path} has no [[transports]] entries")
    sample = read_sample_csv(in_path)
    rng = RngStream(seed, stream).generator()
    final, _dispersion = apply_transports(sample, steps, rng)
    write_sample_csv(final, out)
    click.echo(f"wrote {out} ({len(final)} points)")


@cli.command("analyze")
@click.argument("samples", nargs=-1, required=True,
                type=click.Path(exists=True, path_type=Path))
@click.option("--max-index", type=int, default=16, show_default=True)
@click.option("--radii", default=None, help="Comma-separated window radii for the variance curve.")
@click.option("--n-windows", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=Path("analysis"),
              show_default=True)
def analyze_cmd(samples, max_index, radii, n_windows, seed, out):
    """Compute spectrum (and optionally variance) CSVs from sample CSVs."""
    loaded = [read_sample_csv(p) for p in samples]
    out.mkdir(parents=True, exist_ok=True)
    kgrid = allowed_wavevectors(loaded[0].box, max_index)
    est = scattering_intensity(loaded, kgrid)
    write_spectrum_csv(est, out / "spectrum.csv")
    write_radial_csv(est, out / "spectrum_radial.csv")
    written = ["spectrum.csv", "spectrum_radial.csv"]
    if radii:
        rr = np.array([float(v) for v in radii.split(",")])
        curve = variance_curve(loaded, rr, n_windows, RngStream(seed, 2**32).generator())
        write_variance_csv(curve, out / "variance.csv")
        written.append("variance.csv")
    click.echo(f"wrote {', '.join(written)} in {out}")


@cli.command("pipeline")
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Override the config's output_dir.")
@click.option("--verify", is_flag=True, default=False,
              help="Run the verification suites and include their report.")
def pipeline_cmd(config_path, out, verify):
    """Run a full generate -> transform -> analyze pipeline from a config."""
    config = PipelineConfig.from_toml(config_path)
    out_dir = run_pipeline(config, out_dir=out, verify=verify)
    click.echo(f"pipeline complete: {out_dir}")
    if verify:
        report = json.loads((out_dir / "verification.json").read_text())
        if not report["all_passed"]:
            raise VerificationFailure("verification suites failed; see verification.json")


@cli.command("verify")
@click.option("--suite", "suites", multiple=True,
              type=click.Choice(["fairness", "stability", "spectra", "bounds", "conservation"]),
              help="Suites to run (default: all).")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Write the JSON report here as well as stdout.")
def verify_cmd(suites, out):
    """Run the property-verification suites at pinned seeds."""
    report = run_verification(suites or None)
    text = json.dumps(report, indent=2)
    click.echo(text)
    if out is not None:
        out.write_text(text + "\n")
    if not report["all_passed"]:
        raise VerificationFailure("one or more verification checks failed")


def main(argv=None) -> int:
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show()
        return 1
    except VerificationFailure as exc:
        exc.show()
        return 3
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.Abort:
        click.echo("aborted", err=True)
        return 2
    except Exception as exc:  # runtime failure: structured report on stderr
        err = {"error": type(exc).__name__, "message": str(exc)}
        click.echo(json.dumps(err), err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
