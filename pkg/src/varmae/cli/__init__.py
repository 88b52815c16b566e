"""Command-line interface and run configuration."""

from .config import RunConfig, load_config, parse_config, resolve_output
from .main import main

__all__ = ["RunConfig", "load_config", "parse_config", "resolve_output", "main"]
