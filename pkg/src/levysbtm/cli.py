"""Command line interface: ``levysbtm run | plot | validate | oracle``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, load_config

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fail(code: int, message: str):
    click.echo(message, err=True)
    sys.exit(code)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Score-based transport for jump-diffusion McKean-Vlasov SDEs."""


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--output", "-o", type=click.Path(), default=None, help="Artifact directory (overrides the config).")
@click.option("--concurrent", is_flag=True, help="Run the transport and Monte Carlo engines in parallel threads.")
def run(config_path, output, concurrent):
    """Run the engines named in CONFIG_PATH and write artifacts."""
    from .runner import RunFailure, execute

    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")
    try:
        out = execute(cfg, output, concurrent=concurrent)
    except RunFailure as exc:
        _fail(EXIT_NUMERIC, f"numeric failure: {exc} (partial artifacts in {exc.directory})")
    click.echo(str(out))


@main.command()
@click.argument("config_path", type=click.Path())
def validate(config_path):
    """Check a config file and print its normalised form."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, f"config error: {exc}")
    click.echo(json.dumps({"config": cfg.to_dict(), "config_hash": cfg.hash(), "n_steps": cfg.n_steps},
                          indent=1, sort_keys=True))


def _read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "time" not in rows[0] or "tv" not in rows[0]:
        raise click.UsageError(f"{path} lacks the 'time' and 'tv' columns")
    return [float(r["time"]) for r in rows], [float(r["tv"]) for r in rows]


def _trajectory_dir(path: Path) -> Path:
    if path.is_file():
        path = path.parent
    if (path / "trajectory.json").exists():
        return path
    for sub in ("sbtm", "mc"):
        if (path / sub / "trajectory.json").exists():
            return path / sub
    raise click.UsageError(f"no trajectory found at {path}")


@main.command()
@click.argument("input_path", type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(["tv_series", "heatmap", "kde_panel"]), required=True)
@click.option("--output", "-o", type=click.Path(), default=None)
@click.option("--steps", default="0,40,100,250", help="Checkpoint steps for kde_panel.")
def plot(input_path, kind, output, steps):
    """Render an SVG from a metrics CSV (tv_series) or a trajectory directory (heatmap, kde_panel)."""
    from .plotting import heatmap_svg, kde_panel_svg, kde_panels_from_ensembles, tv_series_svg, write_svg
    from .transport import load_trajectory

    src = Path(input_path)
    if kind == "tv_series":
        times, tv = _read_metrics(src)
        text = tv_series_svg(times, tv)
        default = src.with_name("tv.svg")
    else:
        rec = load_trajectory(_trajectory_dir(src))
        default = _trajectory_dir(src).parent / f"{kind}.svg"
        if kind == "heatmap":
            cols = slice(1, None) if len(rec.times) > 1 else slice(None)
            text = heatmap_svg(rec.times[cols], rec.positions[cols])
        else:
            wanted = [int(s) for s in steps.split(",") if s.strip()]
            idx = [rec.steps.index(s) for s in wanted if s in rec.steps]
            if not idx:
                raise click.UsageError("none of the requested steps are checkpoints")
            if rec.positions[0].shape[1] < 2:
                raise click.UsageError("kde_panel needs a trajectory with at least two coordinates")
            text = kde_panel_svg(kde_panels_from_ensembles([f"step {rec.steps[i]}" for i in idx],
                                                           [rec.positions[i] for i in idx]))
    out = write_svg(text, output or default)
    click.echo(str(out))


@main.group()
def oracle():
    """Quadrature and score oracles (JSON output)."""


def _model_and_quad(example, n_r, n_lambda):
    from .levyquad import build_quadrature
    from .model import build_example

    model = build_example(example)
    return model, build_quadrature(model.levy_measure, n_r, n_lambda)


@oracle.command("compensator")
@click.option("--example", default="Ex1")
@click.option("--n-r", default=64, type=int)
@click.option("--n-lambda", default=16, type=int)
@click.option("--t", "t", default=0.0, type=float)
def oracle_compensator(example, n_r, n_lambda, t):
    """Small-jump compensator of an example's jump measure."""
    from .levyquad import compensator

    model, quad = _model_and_quad(example, n_r, n_lambda)
    click.echo(json.dumps({"compensator": compensator(quad, model, t).tolist()}))


@oracle.command("quadrature")
@click.option("--example", default="Ex1")
@click.option("--n-r", default=64, type=int)
@click.option("--n-lambda", default=16, type=int)
def oracle_quadrature(example, n_r, n_lambda):
    """Node counts and total weights."""
    _, quad = _model_and_quad(example, n_r, n_lambda)
    click.echo(json.dumps({
        "n_small": int(len(quad.small_weights)), "n_large": int(len(quad.large_weights)),
        "mass_small": float(quad.small_weights.sum()), "mass_large": float(quad.large_weights.sum()),
        "lambda_weight_sum": float(quad.lambda_weights.sum()),
    }))


@oracle.command("levy-score")
@click.option("--example", default="Ex1")
@click.option("--x", "xs", multiple=True, type=float, required=True, help="Evaluation point coordinates.")
@click.option("--n-r", default=64, type=int)
@click.option("--n-lambda", default=16, type=int)
def oracle_levy_score(example, xs, n_r, n_lambda):
    """Levy score of the example's initial Gaussian law at X."""
    from .levyquad import levy_score_oracle
    from .model import initial_law

    model, quad = _model_and_quad(example, n_r, n_lambda)
    law = initial_law(example, model)
    x = np.asarray(xs, dtype=float)
    if len(x) != model.dim:
        raise click.UsageError(f"expected {model.dim} coordinates")
    click.echo(json.dumps({"levy_score": levy_score_oracle(quad, model, law.density, x, 0.0).tolist()}))


@oracle.command("fractional")
@click.option("--alpha", default=1.5, type=float)
@click.option("--x", "x", default=1.0, type=float)
def oracle_fractional(alpha, x):
    """Quadrature Levy score and fractional score of N(0, 1) at X."""
    from scipy.stats import norm

    from .levyquad import fractional_score_check

    lhs, rhs = fractional_score_check(alpha, norm.pdf, x)
    click.echo(json.dumps({"lhs": lhs, "rhs": rhs}))


if __name__ == "__main__":  # pragma: no cover
    main()
