"""
Checkpoint persistence in the SYMC binary format.

Layout (little-endian): magic "SYMC", version u32, parameter count u32, then per
parameter: name length u16, utf-8 name, rank u8, dims u32 x rank, float64 data.
The model config is written next to it as `<path>.yaml`.
"""

import os
import struct
from typing import Dict, Tuple

import numpy as np

from .config import ModelConfig, load_config_file, save_config_file
from .errors import CheckpointError, ConfigError
from .symm_completion import SymmCompletion

MAGIC = b'SYMC'
VERSION = 1


def config_sidecar(path: str) -> str:
    return f"{path}.yaml"


def write_state(state: Dict[str, np.ndarray], path: str):
    """Write named arrays in insertion order"""
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<II', VERSION, len(state)))
        for name, value in state.items():
            encoded = name.encode('utf-8')
            if len(encoded) > 0xFFFF:
                raise CheckpointError(f"parameter name too long: {name[:40]}...")
            value = np.ascontiguousarray(value, dtype='<f8')
            f.write(struct.pack('<H', len(encoded)))
            f.write(encoded)
            f.write(struct.pack('<B', value.ndim))
            f.write(struct.pack(f'<{value.ndim}I', *value.shape))
            f.write(value.tobytes())


def read_state(path: str) -> Dict[str, np.ndarray]:
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint '{path}': {e}") from e

    def take(offset: int, size: int) -> Tuple[bytes, int]:
        if offset + size > len(blob):
            raise CheckpointError(f"Checkpoint '{path}' is truncated")
        return blob[offset:offset + size], offset + size

    magic, pos = take(0, 4)
    if magic != MAGIC:
        raise CheckpointError(f"'{path}' is not a SYMC checkpoint")
    header, pos = take(pos, 8)
    version, count = struct.unpack('<II', header)
    if version != VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version}")

    state = {}
    for _ in range(count):
        raw, pos = take(pos, 2)
        (name_len,) = struct.unpack('<H', raw)
        raw, pos = take(pos, name_len)
        name = raw.decode('utf-8')
        raw, pos = take(pos, 1)
        (rank,) = struct.unpack('<B', raw)
        raw, pos = take(pos, 4 * rank)
        dims = struct.unpack(f'<{rank}I', raw)
        size = int(np.prod(dims)) if rank else 1
        raw, pos = take(pos, 8 * size)
        state[name] = np.frombuffer(raw, dtype='<f8').reshape(dims).astype(np.float64)
    if pos != len(blob):
        raise CheckpointError(f"Checkpoint '{path}' has trailing bytes")
    return state


def save_checkpoint(model: SymmCompletion, path: str):
    """Write parameters and the config sidecar"""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    write_state(model.state_dict(), path)
    save_config_file(model.cfg, config_sidecar(path))


def load_checkpoint(path: str, cfg: ModelConfig = None) -> SymmCompletion:
    """Rebuild the model from the sidecar config (or `cfg`) and load its parameters"""
    if cfg is None:
        try:
            cfg = load_config_file(config_sidecar(path))
        except ConfigError as e:
            raise CheckpointError(f"Checkpoint config missing or invalid: {e}") from e
    model = SymmCompletion(cfg)
    try:
        model.load_state_dict(read_state(path))
    except ValueError as e:
        raise CheckpointError(f"Checkpoint '{path}' does not match the config: {e}") from e
    return model
