"""
RoughLik Application Factory
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.
"""
# roughlik/__init__.py

import click

from roughlik.config import config


def create_cli(config_class=None):
    """Build the command-line group with logging configured from config_class"""
    if config_class is None:
        config_class = config['default']

    from roughlik.commands import register_commands
    from roughlik.version import get_full_version

    @click.group(help="Exact and scale-separated likelihoods for rough differential equations")
    @click.version_option(message=get_full_version())
    @click.pass_context
    def cli(ctx):
        ctx.ensure_object(dict)
        ctx.obj['config_class'] = config_class

    config_class.init_app()
    register_commands(cli)
    return cli
