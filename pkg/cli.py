# MixFlow - Ergodic variational flows for desk-scale inference
# Copyright (C) 2025 MixFlow contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU Affero General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

import logging

import click

from config import VERSION, logger
from core.errors import ConfigError, DataFormatError, MixFlowError, NumericalDivergenceError, OptimizationError
from core.experiments.config import describe_keys, load_config
from core.experiments.runner import COMMANDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

CONFIG_HELP = (
    "Experiment configuration file: TOML with dotted keys (flow.epsilon = 0.05) "
    "or JSON with the same nesting. A run_meta.json written by `run` is accepted."
)

EPILOG = "\b\nConfiguration keys (section, key=default):\n" + describe_keys()


def execute(name: str, config_path: str, out: str, seed) -> int:
    """Load the configuration, run one command and map failures to exit codes"""
    try:
        cfg = load_config(config_path).with_seed(seed).with_output(out)
        logger.info(f"mixflow {name}: config {config_path}, seed {cfg.seed}, output {cfg.output.dir}")
        written = COMMANDS[name](cfg)
        for path in written:
            click.echo(path)
        return EXIT_OK
    except (ConfigError, DataFormatError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_CONFIG
    except NumericalDivergenceError as e:
        logger.error(f"Numerical divergence: {e}")
        return EXIT_DIVERGENCE
    except OptimizationError as e:
        logger.error(f"Reference fit diverged: {e}")
        return EXIT_DIVERGENCE
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except MixFlowError as e:
        # remaining precondition failures come from configuration values
        logger.error(f"Invalid input: {e}")
        return EXIT_CONFIG


def _command(name: str, summary: str):
    @click.command(name=name, help=summary, epilog=EPILOG)
    @click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False), help=CONFIG_HELP)
    @click.option('--out', default=None, help="Output directory (overrides output.dir)")
    @click.option('--seed', default=None, type=click.IntRange(0, 2 ** 64 - 1),
                  help="Master seed (overrides replication.seed)")
    @click.pass_context
    def command(ctx, config_path, out, seed):
        ctx.exit(execute(name, config_path, out, seed))
    return command


@click.group(epilog=EPILOG)
@click.version_option(VERSION, prog_name='mixflow')
@click.option('--verbose', is_flag=True, help="Log at DEBUG level")
def cli(verbose):
    """MixFlow experiments: ELBO sweeps, sampling, densities and diagnostics."""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.setLevel(logging.DEBUG)


cli.add_command(_command('sweep', "Replicated ELBO over the epsilon x N grid; writes elbo_sweep.csv, "
                                  "elbo_summary.csv and best.json."))
cli.add_command(_command('run', "Full run at fixed epsilon and N; writes samples, ELBO curves, KSD, "
                                "stability and run_meta.json."))
cli.add_command(_command('sample', "Draw i.i.d. samples from the MixFlow into samples.csv."))
cli.add_command(_command('density', "Evaluate log q and log p at points or fresh draws into density.csv."))
cli.add_command(_command('diagnose', "KSD, ESS, estimator comparison and stability; writes "
                                     "diagnostics.json and stability.csv."))


if __name__ == '__main__':
    cli()
