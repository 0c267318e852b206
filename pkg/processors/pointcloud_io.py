#!/usr/bin/env python3
"""
Point cloud file readers and writers
ASCII XYZ (`x y z` per line, `#` comments) and the binary PCF1 format:
magic "PCF1", u32 count, count x 3 float32, all little-endian.
"""

import struct
from pathlib import Path
from typing import Union

import numpy as np

from core.errors import PointCloudFormatError

PCF_MAGIC = b'PCF1'
XYZ_SUFFIXES = ('.xyz', '.txt')
PCF_SUFFIXES = ('.pcf',)

PathLike = Union[str, Path]


def _checked(points: np.ndarray, path: PathLike) -> np.ndarray:
    if points.shape[0] == 0:
        raise PointCloudFormatError(f"{path}: point cloud is empty")
    if not np.all(np.isfinite(points)):
        raise PointCloudFormatError(f"{path}: point cloud contains NaN or Inf")
    return points


def read_xyz(path: PathLike) -> np.ndarray:
    """Parse an ASCII XYZ file; extra columns (normals, colors) are ignored"""
    rows = []
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line_no, line in enumerate(f, 1):
                line = line.split('#', 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) < 3:
                    raise PointCloudFormatError(f"{path}:{line_no}: expected 3 coordinates, got {len(parts)}")
                try:
                    rows.append([float(v) for v in parts[:3]])
                except ValueError:
                    raise PointCloudFormatError(f"{path}:{line_no}: not a number in '{line}'")
    except UnicodeDecodeError as e:
        raise PointCloudFormatError(f"{path}: not a UTF-8 text file ({e.reason} at byte {e.start})") from e
    return _checked(np.asarray(rows, dtype=np.float64).reshape(-1, 3), path)


def write_xyz(points: np.ndarray, path: PathLike, header: str = ''):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        if header:
            for line in header.splitlines():
                f.write(f"# {line}\n")
        for x, y, z in points:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_pcf(path: PathLike) -> np.ndarray:
    with open(path, 'rb') as f:
        blob = f.read()
    if len(blob) < 8 or blob[:4] != PCF_MAGIC:
        raise PointCloudFormatError(f"{path}: missing PCF1 header")
    (count,) = struct.unpack('<I', blob[4:8])
    expected = 8 + 12 * count
    if len(blob) != expected:
        raise PointCloudFormatError(f"{path}: expected {expected} bytes for {count} points, got {len(blob)}")
    points = np.frombuffer(blob, dtype='<f4', offset=8).reshape(count, 3).astype(np.float64)
    return _checked(points, path)


def write_pcf(points: np.ndarray, path: PathLike):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, 'wb') as f:
        f.write(PCF_MAGIC)
        f.write(struct.pack('<I', points.shape[0]))
        f.write(np.ascontiguousarray(points, dtype='<f4').tobytes())


def read_cloud(path: PathLike) -> np.ndarray:
    """Read by extension; unreadable files raise OSError with the path in the message"""
    suffix = Path(path).suffix.lower()
    if suffix in PCF_SUFFIXES:
        return read_pcf(path)
    if suffix in XYZ_SUFFIXES:
        return read_xyz(path)
    raise PointCloudFormatError(f"{path}: unknown point cloud extension '{suffix}'")


def write_cloud(points: np.ndarray, path: PathLike):
    suffix = Path(path).suffix.lower()
    if suffix in PCF_SUFFIXES:
        write_pcf(points, path)
    elif suffix in XYZ_SUFFIXES:
        write_xyz(points, path)
    else:
        raise PointCloudFormatError(f"{path}: unknown point cloud extension '{suffix}'")
