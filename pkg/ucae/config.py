"""
Experiment configuration.

Config files are flat `key = value` text (parsed with python-dotenv), one
key set for world generation, training and evaluation. Unknown keys are
errors so typos in experiment configs fail loudly.

Example:
    latent_dim = 2
    domains = 6:0,8:1,6:0,10:2
    warp_alpha = 0.5
    lambda = 1.0
    steps = 20000
"""

import logging
import os
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from ucae.errors import ConfigError
from ucae.metrics import CheckConfig
from ucae.training import TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class WorldConfig:
    """Parameters of a synthetic world for `gen-data`."""
    latent_dim: int = 2
    domains: List[Tuple[int, int]] = field(default_factory=lambda: [(6, 0), (8, 1)])
    warp_alpha: float = 0.5
    offset_scale: float = 1.0
    samples: int = 20000
    cluster_sep: float = 0.0
    seed: int = 0


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    check: CheckConfig = field(default_factory=CheckConfig)
    source: Optional[str] = None

    def echo(self) -> Dict[str, str]:
        """Every resolved key as text, for checkpoint metadata."""
        out = {}
        for key, (section, attr) in KEYS.items():
            out[key] = format_value(getattr(getattr(self, section), attr))
        return out


# config key -> (section, attribute)
KEYS: Dict[str, Tuple[str, str]] = {
    "latent_dim": ("world", "latent_dim"),
    "domains": ("world", "domains"),
    "warp_alpha": ("world", "warp_alpha"),
    "offset_scale": ("world", "offset_scale"),
    "samples": ("world", "samples"),
    "cluster_sep": ("world", "cluster_sep"),
    "seed": ("world", "seed"),
    "eval_samples": ("check", "eval_samples"),
    "n_permutations": ("check", "n_permutations"),
    "alpha": ("check", "alpha"),
    "bound_samples": ("check", "bound_samples"),
}
_TRAIN_ONLY = {f.name for f in fields(TrainConfig)} - {"latent_dim", "seed"}
KEYS.update({("lambda" if name == "lam" else name): ("train", name) for name in sorted(_TRAIN_ONLY)})


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        if value and isinstance(value[0], tuple):
            return ",".join(f"{n}:{m}" for n, m in value)
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(key: str, text: str, current):
    text = text.strip()
    try:
        if key == "domains":
            pairs = []
            for item in text.split(","):
                n, m = item.strip().split(":")
                pairs.append((int(n), int(m)))
            return pairs
        if isinstance(current, bool):
            if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return text.lower() in ("true", "1", "yes")
        if isinstance(current, tuple):
            return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()
        if key in ("round_steps", "bank_size"):
            return None if text.lower() in ("", "none") else int(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"config key '{key}': cannot parse value '{text}'") from None


def apply_values(cfg: ExperimentConfig, values: Dict[str, Optional[str]], source: str = "<values>") -> ExperimentConfig:
    """Set every key in `values` on `cfg`; unknown keys raise ConfigError."""
    for key, text in values.items():
        if key not in KEYS:
            raise ConfigError(f"{source}: unknown config key '{key}'")
        if text is None:
            raise ConfigError(f"{source}: config key '{key}' has no value")
        section, attr = KEYS[key]
        target = getattr(cfg, section)
        setattr(target, attr, _parse(key, text, getattr(target, attr)))
    # latent dim and seed are shared between the world and training
    cfg.train.latent_dim = cfg.world.latent_dim
    cfg.train.seed = cfg.world.seed
    try:
        cfg.train.validate()
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from None
    return cfg


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    """
    Load an experiment config file, or the defaults when `path` is None.

    Args:
        path: Flat `key = value` file.

    Returns:
        ExperimentConfig
    """
    cfg = ExperimentConfig(source=path)
    if path is None:
        return apply_values(cfg, {})
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    cfg = apply_values(cfg, dict(values), source=path)
    logger.info(f"✓ Loaded config {path} ({len(values)} keys)")
    return cfg


def load_environment(env_path: Optional[str] = None) -> Dict[str, Optional[str]]:
    """
    Load an optional .env file and return the UCAE_* settings.

    Recognized: UCAE_LOG_LEVEL, UCAE_SEED.
    """
    load_dotenv(env_path or os.path.join(os.getcwd(), ".env"))
    return {"log_level": os.getenv("UCAE_LOG_LEVEL"), "seed": os.getenv("UCAE_SEED")}
