"""GPR wall inversion: FDTD B-scan synthesis and a from-scratch CNN for layer inversion."""

from .cli import main
from .config import ModelConfig, RunConfig, load_run_config
from .logging import configure_logging

__all__ = [
    "ModelConfig",
    "RunConfig",
    "load_run_config",
    "configure_logging",
    "main",
]
