"""Salmon harvesting as an optimal stopping problem.

Commodity prices (salmon, soy) follow two-factor mean-reverting models, the
farmed population follows a host-parasite model with threshold-triggered
sea-lice treatments, and harvest rules are learned by regression Monte Carlo.
"""

__version__ = "0.1.0"

from .config import Config, ConfigError, load_config  # noqa: E402

__all__ = ["Config", "ConfigError", "load_config", "__version__"]
