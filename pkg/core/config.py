#!/usr/bin/env python3
"""
Centralized configuration for SymmCompletion.
All config loading happens here - other modules import from this.
"""

import os
from dataclasses import dataclass, asdict, fields
from typing import Dict, List, Optional, Tuple

import yaml

from .errors import ConfigError

# Try to load .env file if python-dotenv is available
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

THREADS_ENV_VAR = 'SYMM_THREADS'

# Which YAML section each ModelConfig field lives in
SECTIONS = {
    'model': ('n_k', 'c', 'enc_channels', 'fuse_channels', 'heads', 'knn_k', 'ratios',
              'lstnet_features', 'initial_generator'),
    'training': ('lr', 'betas', 'weight_decay', 'seed', 'epochs', 'batch_size'),
    'data': ('partial_size', 'resolution', 'f1_threshold'),
    'guidance': ('use_f_k', 'use_f_m'),
}

LSTNET_FEATURE_MODES = ('both', 'local', 'global')
INITIAL_GENERATORS = ('lstnet', 'plane')

_config_cache: Dict[str, 'ModelConfig'] = {}


@dataclass
class ModelConfig:
    """All hyperparameters of the assembled model and its training run"""
    n_k: int = 512
    c: int = 512
    enc_channels: int = 128
    fuse_channels: int = 256
    heads: int = 4
    knn_k: int = 16
    ratios: Tuple[int, int] = (4, 4)
    lstnet_features: str = 'both'
    initial_generator: str = 'lstnet'

    lr: float = 0.0002
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    seed: int = 0
    epochs: int = 50
    batch_size: int = 8

    partial_size: int = 512
    resolution: int = 16384
    f1_threshold: float = 0.01

    use_f_k: bool = True
    use_f_m: bool = True

    def __post_init__(self):
        self.ratios = tuple(int(r) for r in self.ratios)
        self.betas = tuple(float(b) for b in self.betas)
        # PyYAML reads '2e-4' as a string
        try:
            self.lr = float(self.lr)
            self.weight_decay = float(self.weight_decay)
            self.f1_threshold = float(self.f1_threshold)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid numeric setting: {e}") from e
        self.validate()

    def validate(self):
        """Raise ConfigError on any inconsistent setting"""
        for name in ('n_k', 'c', 'enc_channels', 'fuse_channels', 'heads', 'knn_k',
                     'epochs', 'batch_size', 'partial_size', 'resolution'):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"'{name}' must be a positive integer, got {value!r}")
        if len(self.ratios) != 2 or any(r < 1 for r in self.ratios):
            raise ConfigError(f"'ratios' must be two positive integers, got {self.ratios!r}")
        if self.c % 2 or self.enc_channels % 2:
            raise ConfigError("'c' and 'enc_channels' must be even")
        if self.fuse_channels % self.heads:
            raise ConfigError(f"'heads' ({self.heads}) must divide 'fuse_channels' ({self.fuse_channels})")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("'lr' and 'weight_decay' must be non-negative")
        if len(self.betas) != 2 or not all(0 < b < 1 for b in self.betas):
            raise ConfigError(f"'betas' must lie in (0, 1), got {self.betas!r}")
        if self.f1_threshold <= 0:
            raise ConfigError("'f1_threshold' must be positive")
        if self.lstnet_features not in LSTNET_FEATURE_MODES:
            raise ConfigError(f"'lstnet_features' must be one of {LSTNET_FEATURE_MODES}")
        if self.initial_generator not in INITIAL_GENERATORS:
            raise ConfigError(f"'initial_generator' must be one of {INITIAL_GENERATORS}")

    @property
    def output_counts(self) -> List[int]:
        """Point counts of [p_init, fine1, fine2]"""
        counts = [2 * self.n_k]
        for r in self.ratios:
            counts.append(counts[-1] * r)
        return counts

    def replace(self, **changes) -> 'ModelConfig':
        data = self.to_dict()
        data.update(changes)
        return ModelConfig(**data)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['ratios'] = list(self.ratios)
        data['betas'] = list(self.betas)
        return data

    def to_sections(self) -> Dict:
        """Nested form written to YAML files"""
        data = self.to_dict()
        return {section: {key: data[key] for key in keys} for section, keys in SECTIONS.items()}

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelConfig':
        """Build from flat or sectioned dicts; unknown keys are rejected"""
        known = {f.name for f in fields(cls)}
        flat = {}
        for key, value in (data or {}).items():
            if key in SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"Section '{key}' must be a mapping")
                for sub_key, sub_value in value.items():
                    if sub_key not in SECTIONS[key]:
                        raise ConfigError(f"Unknown key '{key}.{sub_key}'")
                    flat[sub_key] = sub_value
            elif key in known:
                flat[key] = value
            else:
                raise ConfigError(f"Unknown config key '{key}'")
        try:
            return cls(**flat)
        except TypeError as e:
            raise ConfigError(f"Invalid config: {e}") from e


def load_config_file(path: str) -> ModelConfig:
    """Parse a YAML config file into a ModelConfig"""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config file '{path}': {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse config file '{path}': {e}") from e
    return ModelConfig.from_dict(data or {})


def save_config_file(cfg: ModelConfig, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(cfg.to_sections(), f, sort_keys=False, default_flow_style=None)


def get_config(path: Optional[str] = None) -> ModelConfig:
    """Return the config for `path` (defaults when None). Cached per path."""
    key = os.path.abspath(path) if path else '<defaults>'
    if key not in _config_cache:
        _config_cache[key] = load_config_file(path) if path else ModelConfig()
    return _config_cache[key]


def get_model_defaults() -> Dict:
    """Return the default hyperparameters as a plain dict."""
    return ModelConfig().to_dict()


def get_thread_count() -> int:
    """Worker thread cap from SYMM_THREADS; 0 means single-threaded deterministic mode."""
    raw = os.getenv(THREADS_ENV_VAR, '').strip()
    if not raw:
        return min(4, os.cpu_count() or 1)
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}")
    if value < 0:
        raise ConfigError(f"{THREADS_ENV_VAR} must be >= 0, got {value}")
    return value
