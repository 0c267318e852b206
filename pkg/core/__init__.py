"""
Core SymmCompletion modules
"""

from .config import ModelConfig, get_config, get_thread_count, get_model_defaults
from .errors import (SymmCompletionError, SizeError, DomainError, ShapeError, ConfigError,
                     CheckpointError, PointCloudFormatError, TrainingDivergedError)
from .symm_completion import SymmCompletion, CompletionResult, complete, count_params
from .checkpoint import save_checkpoint, load_checkpoint
from .run_tracker import RunTracker

__all__ = [
    'ModelConfig', 'get_config', 'get_thread_count', 'get_model_defaults',
    'SymmCompletionError', 'SizeError', 'DomainError', 'ShapeError', 'ConfigError',
    'CheckpointError', 'PointCloudFormatError', 'TrainingDivergedError',
    'SymmCompletion', 'CompletionResult', 'complete', 'count_params',
    'save_checkpoint', 'load_checkpoint', 'RunTracker',
]
