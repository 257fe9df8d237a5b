"""
Configuration Management for the HuntFuzz clustered SFI fuzzing framework
Loads defaults from the environment (.env) and campaign config files
"""

import os
import logging
from pathlib import Path
from typing import Dict, Any, Optional, Mapping
from dotenv import load_dotenv, dotenv_values

from errors import ConfigError

# Load environment variables from .env file
load_dotenv(override=True)

# Configure logging
logger = logging.getLogger(__name__)


BASE_DIR = Path(__file__).resolve().parent
"""Project root directory"""

CLUSTERING_MODES = ("strict", "pivot")
DISTANCE_TERMS = ("proximity", "raw")
CAMPAIGN_MODES = ("huntfuzz", "baseline-k0", "no-concolic")


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == 'true'


class Config:
    """Centralized configuration management"""

    def __init__(self):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.logger.debug("🔧 Loading HuntFuzz configuration...")

        self.campaign = self._load_campaign_config()
        self.solver = self._load_solver_config()
        self.vm = self._load_vm_config()
        self.app = self._load_app_config()

        self._validate_config()

        self.logger.debug("✅ Configuration loaded successfully")

    def _load_campaign_config(self) -> Dict[str, Any]:
        """Load campaign defaults (k, weights, thresholds, budgets)"""
        return {
            'mode': os.getenv('HUNTFUZZ_MODE', 'huntfuzz'),
            'k': int(os.getenv('HUNTFUZZ_K', '2')),
            'w1': float(os.getenv('HUNTFUZZ_W1', '0.5')),
            'w2': float(os.getenv('HUNTFUZZ_W2', '0.5')),
            'mutate_threshold': int(os.getenv('HUNTFUZZ_MUTATE_THRESHOLD', '10000')),
            'clustering_mode': os.getenv('HUNTFUZZ_CLUSTERING_MODE', 'strict'),
            'distance_term': os.getenv('HUNTFUZZ_DISTANCE_TERM', 'proximity'),
            'budget': os.getenv('HUNTFUZZ_BUDGET', '100000execs'),
            'seed': int(os.getenv('HUNTFUZZ_SEED', '0')),
            'repeats': int(os.getenv('HUNTFUZZ_REPEATS', '1')),
            'sample_every': int(os.getenv('HUNTFUZZ_SAMPLE_EVERY', '100')),
            'energy_concolic': int(os.getenv('HUNTFUZZ_ENERGY_CONCOLIC', '16')),
            'energy_coverage': int(os.getenv('HUNTFUZZ_ENERGY_COVERAGE', '4')),
            'energy_default': int(os.getenv('HUNTFUZZ_ENERGY_DEFAULT', '1')),
            'context_insensitive': _env_bool('HUNTFUZZ_CONTEXT_INSENSITIVE', 'false'),
            'deep_depth_threshold': int(os.getenv('HUNTFUZZ_DEEP_DEPTH_THRESHOLD', '64')),
        }

    def _load_solver_config(self) -> Dict[str, Any]:
        """Load constraint solver limits"""
        return {
            'enumeration_budget': int(os.getenv('HUNTFUZZ_SOLVER_BUDGET', '100000')),
            'max_search_bytes': int(os.getenv('HUNTFUZZ_SOLVER_MAX_BYTES', '8')),
        }

    def _load_vm_config(self) -> Dict[str, Any]:
        """Load target VM limits"""
        return {
            'context_depth': int(os.getenv('HUNTFUZZ_CONTEXT_DEPTH', '4')),
            'block_budget': int(os.getenv('HUNTFUZZ_BLOCK_BUDGET', '100000')),
            'step_budget': int(os.getenv('HUNTFUZZ_STEP_BUDGET', '1000000')),
            'max_input_len': int(os.getenv('HUNTFUZZ_MAX_INPUT_LEN', '4096')),
        }

    def _load_app_config(self) -> Dict[str, Any]:
        """Load application configuration"""
        return {
            'log_level': os.getenv('HUNTFUZZ_LOG_LEVEL', 'INFO'),
            'log_to_file': _env_bool('HUNTFUZZ_LOG_TO_FILE', 'false'),
            'output_dir': os.getenv('HUNTFUZZ_OUTPUT_DIR', 'outputs'),
            'workers': int(os.getenv('HUNTFUZZ_WORKERS', '1')),
        }

    def _validate_config(self):
        """Validate configuration and log warnings for odd combinations"""
        campaign = self.campaign
        if campaign['clustering_mode'] not in CLUSTERING_MODES:
            raise ConfigError(f"unknown clustering mode {campaign['clustering_mode']!r}")
        if campaign['distance_term'] not in DISTANCE_TERMS:
            raise ConfigError(f"unknown distance term {campaign['distance_term']!r}")
        if campaign['mode'] not in CAMPAIGN_MODES:
            raise ConfigError(f"unknown campaign mode {campaign['mode']!r}")
        if campaign['mutate_threshold'] < 1:
            raise ConfigError("mutate_threshold must be >= 1")
        if self.app['workers'] > 1:
            self.logger.warning("⚠️ Multi-worker mode enabled - campaign results are no longer reproducible")

    def get_targets_dir(self) -> Path:
        """Return the shipped fixture directory"""
        return BASE_DIR / 'assets' / 'targets'

    def get_output_dir(self) -> Path:
        """Return the default artifact directory"""
        return Path(self.app['output_dir'])

    def get_configuration_summary(self) -> Dict[str, Any]:
        """Get a summary of the current configuration"""
        return {
            'campaign': dict(self.campaign),
            'solver': dict(self.solver),
            'vm': dict(self.vm),
            'workers': self.app['workers'],
        }


def load_campaign_file(path: str) -> Dict[str, str]:
    """
    Read a key=value campaign config file.

    Keys are normalized to the underscore spelling (``mutate-threshold`` becomes
    ``mutate_threshold``). Values stay strings; callers coerce them.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    raw = dotenv_values(path)
    values = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError(f"{path}: key {key!r} has no value")
        values[key.strip().lower().replace('-', '_')] = value.strip()
    logger.info(f"📋 Loaded {len(values)} settings from {path}")
    return values


def merge_settings(*layers: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    """Merge setting layers left to right; ``None`` values never override."""
    merged: Dict[str, Any] = {}
    for layer in layers:
        if not layer:
            continue
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    return merged


# Global configuration instance
config = Config()

# Convenience functions for easy access
def get_default_k() -> int:
    """Get default clustering distance"""
    return config.campaign['k']

def get_mutate_threshold() -> int:
    """Get default per-cluster mutation budget"""
    return config.campaign['mutate_threshold']

def get_context_depth() -> int:
    """Get default calling-context depth"""
    return config.vm['context_depth']

def get_step_budget() -> int:
    """Get default VM step budget"""
    return config.vm['step_budget']

def get_max_input_len() -> int:
    """Get maximum program input length"""
    return config.vm['max_input_len']

def get_log_level() -> str:
    """Get logging level name"""
    return config.app['log_level']

def get_workers() -> int:
    """Get bench worker count"""
    return config.app['workers']
