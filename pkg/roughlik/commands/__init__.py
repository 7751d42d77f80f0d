"""
RoughLik Commands Package
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Shared option sets and error handling for the experiment commands
"""

from functools import wraps
import json
import logging
import os
import sys

import click

from roughlik.utils import (
    ConfigError, DataFormatError, FlowError, GridError, InversionError, RoughLikError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def handle_errors(f):
    """
    Decorator mapping library errors to exit codes

    Configuration errors, malformed input and grid or dimension mismatches
    exit with 2. Numerical failures exit with 3 after writing a JSON error
    object (with the failing interval for inversion errors) to stdout and to
    <out>/error.json.
    """
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ConfigError, DataFormatError, GridError, ValueError) as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except RoughLikError as e:
            error = {'error': type(e).__name__, 'message': str(e)}
            if isinstance(e, InversionError):
                error['interval'] = e.interval
                error['residual'] = e.residual
            if isinstance(e, FlowError):
                error['substep'] = e.substep
            logger.error(f"{type(e).__name__}: {e}")

            out_dir = kwargs.get('out')
            if out_dir:
                os.makedirs(out_dir, exist_ok=True)
                with open(os.path.join(out_dir, 'error.json'), 'w') as fh:
                    json.dump(error, fh, indent=2, sort_keys=True)
                    fh.write('\n')
            click.echo(json.dumps(error, sort_keys=True))
            sys.exit(EXIT_NUMERICAL)
    return decorated_function


def experiment_options(f):
    """Flags shared by every experiment command; each overrides the JSON config"""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                     help='Experiment config JSON'),
        click.option('--seed', type=int, help='Random seed (mandatory for sampling tasks)'),
        click.option('--out', type=click.Path(file_okay=False), help='Output directory'),
        click.option('--model', help='Registered model id'),
        click.option('--h', type=float, help='Hurst parameter of the driver'),
        click.option('--levels', help='Dyadic level range A..B'),
        click.option('--theta-grid', 'theta_grid', help='Parameter grid name=lo:hi:count,...'),
        click.option('--theta', 'theta_values', help='Parameter point name=value,...'),
        click.option('--n', 'level', type=int, help='Dyadic level of the simulation grid'),
        click.option('--T', 'horizon', type=float, help='Time horizon'),
        click.option('--steps', type=int, help='RK4 substeps per interval'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def register_commands(cli):
    """Attach the experiment commands to the CLI group"""
    from roughlik.commands.experiments import (
        converge, invert, loglik, mle, posterior, simulate,
    )

    for command in (simulate, invert, loglik, mle, posterior, converge):
        cli.add_command(command)
