"""Utility functions for loading configuration files."""

import os
import yaml
from pathlib import Path
from typing import Any, Dict

ENV_PREFIX = "TWL_"

CONFIG_DIR = Path(__file__).parent.parent.parent / 'config'


def _apply_env_overrides(config_name: str, config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Replace values with TWL_<CONFIG>_<KEY> environment variables.

    Nested keys are joined with a double underscore, e.g.
    TWL_CONSTANTS_POWER_ITERATION__MAX_ITERATIONS=500. Values are parsed
    with yaml.safe_load so numbers and booleans keep their type.
    """
    prefix = f"{ENV_PREFIX}{config_name.upper()}_"
    for name, raw in os.environ.items():
        if not name.startswith(prefix):
            continue
        path = [part.lower() for part in name[len(prefix):].split('__')]
        node = config
        for key in path[:-1]:
            node = node.setdefault(key, {})
        # grid keys like K are upper case in the YAML files
        leaf = path[-1]
        if leaf not in node and leaf.upper() in node:
            leaf = leaf.upper()
        node[leaf] = yaml.safe_load(raw)
    return config


def load_config(config_name: str, config_dir: Path = CONFIG_DIR) -> Dict[str, Any]:
    """
    Load a YAML configuration file from the config directory.

    Args:
        config_name: Name of the config file (without .yaml extension)
        config_dir: Directory holding the YAML files

    Returns:
        Dict containing the configuration data, with environment overrides applied
    """
    config_path = Path(config_dir) / f"{config_name}.yaml"

    with open(config_path, 'r', encoding='utf-8') as f:
        config = yaml.safe_load(f) or {}
    return _apply_env_overrides(config_name, config)


# Load common configurations
calibration_cfg = load_config('calibration')
cli_cfg = load_config('cli')
constants_cfg = load_config('constants')
forms_cfg = load_config('forms')
grid_cfg = load_config('grid')
measure_cfg = load_config('measure')
sizelemma_cfg = load_config('sizelemma')
