"""Configuration-driven experiment runner and its command-line interface."""
from .config import RunConfig, config_from_text, load_config
from .csvio import emit_csv, read_csv
