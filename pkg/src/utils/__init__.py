"""Configuration, logging setup and seed derivation."""
from src.utils.config import Config, get_config, reset_config, setup_logging
from src.utils.rng import derive_seed, make_rng

__all__ = ["Config", "derive_seed", "get_config", "make_rng", "reset_config", "setup_logging"]
