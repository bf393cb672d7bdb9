"""Command line entry point: one subcommand per experiment."""

from __future__ import annotations

import json
import sys

import click

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import EXPERIMENTS

EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _emit_error(payload: dict, code: int):
    click.echo(json.dumps(payload, sort_keys=True))
    sys.exit(code)


def _run(name: str, config_path, out_dir, seed, threads):
    try:
        cfg = load_config(config_path) if config_path else ExperimentConfig()
        cfg = cfg.with_seed(seed)
    except ConfigError as exc:
        _emit_error(exc.to_dict(), EXIT_CONFIG)
    except OSError as exc:
        _emit_error({"error": "config", "field": "--config", "message": str(exc)}, EXIT_CONFIG)
    try:
        art = EXPERIMENTS[name](cfg, threads=threads)
    except Exception as exc:  # reported as machine-readable JSON
        _emit_error({"error": type(exc).__name__, "experiment": name, "message": str(exc)},
                    EXIT_FAILURE)
    for path in art.write(out_dir):
        click.echo(path)


def _options(func):
    func = click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True,
                        help="Worker threads.")(func)
    func = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
                        help="RNG seed; overrides the config value.")(func)
    func = click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out",
                        show_default=True, help="Output directory.")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                        help="Config file; defaults are used when omitted.")(func)
    return func


@click.group()
def main():
    """Desk-scale experiments on torus Anosov maps and their conjugacies."""


def _command(name: str, doc: str):
    @main.command(name, help=doc)
    @_options
    def command(config_path, out_dir, seed, threads):
        _run(name, config_path, out_dir, seed, threads)

    return command


_command("periodic-data", "Periodic points, Jacobians, weights and the matching report.")
_command("equidist", "Equidistribution errors of weighted periodic measures and rate fits.")
_command("sft", "Symbolic equidistribution on a subshift of finite type.")
_command("build-hn", "Build the approximate conjugacy at one N-context.")
_command("compare", "C0 and C1 distances across N-contexts.")


@main.command("show-config")
def show_config():
    """Print the default config document."""
    click.echo(ExperimentConfig().dumps(), nl=False)


if __name__ == "__main__":
    main()
