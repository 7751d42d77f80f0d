"""
RoughLik Main Entry Point
Copyright (c) 2025 Calmic Sdn Bhd. All rights reserved.

Command-line entry point using the centralized CLI factory
"""
from roughlik import create_cli
from config import get_config

# Create the CLI at module level so `python main.py` and tests share it
config_class = get_config()
cli = create_cli(config_class)

if __name__ == '__main__':
    cli()
