"""
Configuration Management for EKLF runs
Resolves defaults, an optional JSON/YAML config file and explicit CLI flags into one RunConfig
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from dataseq import SplitSpec, SyntheticConfig
from ekf import NoiseConfig
from errors import ConfigError
from trainer import DEFAULT_LAMBDA_GRID, HyperParams

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240101


@dataclass
class RunConfig:
    """Effective settings of one CLI run"""
    command: str = ""

    # Files
    input: Optional[str] = None
    output: Optional[str] = None
    dims: Optional[List[int]] = None

    # Model settings
    rank: int = 20
    lam: float = 0.01
    alpha: float = 0.01
    activation: str = "leaky_relu"
    w_var: float = 0.01
    r_var: float = 0.1
    p0: float = 1.0
    max_iters: int = 500
    err_threshold: float = 1e-5
    seed: int = DEFAULT_SEED
    workers: int = 1
    lambda_grid: Optional[List[float]] = None

    # Split settings
    train_frac: float = 0.3
    val_frac: float = 0.1
    test_frac: float = 0.6
    case: Optional[int] = None

    # Synthetic generator settings
    nodes: int = 50
    slots: int = 30
    density: float = 0.02
    drift: float = 0.05
    noise: float = 0.05

    log_level: str = "INFO"

    def hyper_params(self) -> HyperParams:
        return HyperParams(
            rank=self.rank,
            lam=self.lam,
            alpha=self.alpha,
            activation=self.activation,
            noise=NoiseConfig(w_scale=self.w_var, r_scale=self.r_var, p0_scale=self.p0),
            max_iters=self.max_iters,
            err_threshold=self.err_threshold,
            seed=self.seed,
            workers=self.workers,
        )

    def split_spec(self) -> SplitSpec:
        if self.case is not None:
            return SplitSpec.from_case(self.case, self.seed)
        return SplitSpec(self.train_frac, self.val_frac, self.test_frac, self.seed)

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            nodes=self.nodes,
            slots=self.slots,
            rank=self.rank,
            density=self.density,
            drift_scale=self.drift,
            noise_sigma=self.noise,
            alpha=self.alpha,
            seed=self.seed,
        )

    def lambdas(self) -> List[float]:
        return list(self.lambda_grid) if self.lambda_grid else list(DEFAULT_LAMBDA_GRID)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ConfigManager:
    """Manages run configuration with multiple sources"""

    def __init__(self, config_file: Optional[str] = None):
        self.explicit_file = config_file is not None
        self.config_file = config_file or "config.json"
        self.config = RunConfig()

    def load_config(self, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
        """Load configuration from multiple sources in priority order"""
        # 1. Load from file (if exists)
        self._load_from_file()

        # 2. Override with explicit flags
        if overrides:
            self._apply_overrides(overrides)

        # 3. Validate configuration
        self._validate_config()

        return self.config

    def save_config(self, config: RunConfig, path: Optional[str] = None) -> None:
        target = path or self.config_file
        try:
            with open(target, "w") as f:
                json.dump(config.to_dict(), f, indent=2)
            logger.info(f"Configuration saved to {target}")
        except OSError as e:
            logger.error(f"Error saving configuration: {e}")
            raise

    def _read_file(self) -> Dict[str, Any]:
        with open(self.config_file, "r") as f:
            if Path(self.config_file).suffix.lower() in (".yml", ".yaml"):
                return yaml.safe_load(f) or {}
            return json.load(f)

    def _load_from_file(self) -> None:
        """Load configuration from a JSON or YAML file"""
        if not os.path.exists(self.config_file):
            if self.explicit_file:
                raise ConfigError(f"configuration file {self.config_file} not found")
            logger.debug(f"Configuration file {self.config_file} not found, using defaults")
            return

        try:
            file_config = self._read_file()
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot parse configuration file {self.config_file}: {e}") from None
        if not isinstance(file_config, dict):
            raise ConfigError(f"configuration file {self.config_file} must hold a mapping")

        known = {f.name for f in fields(RunConfig)}
        for key, value in file_config.items():
            if key in known:
                setattr(self.config, key, value)
            else:
                logger.warning(f"Ignoring unknown configuration key {key!r} in {self.config_file}")

        logger.info(f"Configuration loaded from {self.config_file}")

    def _apply_overrides(self, overrides: Dict[str, Any]) -> None:
        for key, value in overrides.items():
            if value is None:
                continue
            if not hasattr(self.config, key):
                raise ConfigError(f"unknown configuration key {key!r}")
            setattr(self.config, key, value)
            logger.debug(f"Set {key} from command line")

    def _validate_config(self) -> None:
        """Build every typed config once so invalid values fail at load time"""
        config = self.config
        try:
            config.hyper_params()
            config.split_spec()
            config.synthetic_config()
            for lam in config.lambdas():
                if not float(lam) > 0:
                    raise ConfigError(f"lambda grid values must be > 0, got {lam}")
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid configuration value: {e}") from None

        if config.dims is not None and (len(config.dims) != 2 or min(config.dims) < 1):
            raise ConfigError(f"dims must be two positive integers M,T, got {config.dims}")
        if config.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"unknown log level {config.log_level!r}")


def create_sample_config(path: str = "config.sample.json") -> None:
    """Create a sample configuration file holding every default"""
    sample = RunConfig().to_dict()
    for key in ("command", "input", "output", "dims", "case"):
        sample.pop(key)

    with open(path, "w") as f:
        json.dump(sample, f, indent=2)
        f.write("\n")

    logger.info(f"Sample configuration created in {path}")


if __name__ == "__main__":
    create_sample_config()
