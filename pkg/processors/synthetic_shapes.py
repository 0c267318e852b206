#!/usr/bin/env python3
"""
Synthetic partial/complete shape pairs
Parametric shapes with a known mirror plane, surface-sampled, normalized and
occluded by a random viewpoint. Every fifth sample gets a one-sided handle
that breaks the symmetry.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from core.config import get_thread_count
from core.geometry import random_unit_vectors
from .pointcloud_io import read_pcf, write_pcf

SHAPE_KINDS = ('box', 'ellipsoid', 'cylinder_box')
ASYMMETRIC_EVERY = 5
HANDLE_SHARE = 0.45
MANIFEST_NAME = 'manifest.json'
MANIFEST_KEYS = ('shape_id', 'partial', 'gt')

Surface = Tuple[np.ndarray, np.ndarray]  # points, outward normals


@dataclass
class SampleRecord:
    """A partial observation with its complete ground truth"""
    partial: np.ndarray
    gt: np.ndarray
    shape_id: str
    symmetry_plane: Optional[np.ndarray] = None
    kind: str = ''
    symmetric: bool = True

    def to_manifest(self) -> dict:
        plane = None if self.symmetry_plane is None else [float(v) for v in self.symmetry_plane]
        return {
            'shape_id': self.shape_id,
            'kind': self.kind,
            'symmetric': self.symmetric,
            'symmetry_plane': plane,
            'partial': f"{self.shape_id}.partial.pcf",
            'gt': f"{self.shape_id}.gt.pcf",
        }


# Surface samplers (all symmetric about x = 0)

def sample_box(rng: np.random.Generator, half: np.ndarray, count: int,
               center: Optional[np.ndarray] = None) -> Surface:
    """Uniform samples on the faces of an axis-aligned box"""
    a, b, c = half
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    points = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    normals = np.zeros((count, 3))
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    rows = np.arange(count)
    points[rows, axis] = sign * half[axis]
    normals[rows, axis] = sign
    if center is not None:
        points = points + center
    return points, normals


def sample_ellipsoid(rng: np.random.Generator, radii: np.ndarray, count: int) -> Surface:
    directions = random_unit_vectors(rng, count)
    points = directions * radii
    normals = points / radii ** 2
    return points, normals / np.linalg.norm(normals, axis=1, keepdims=True)


def sample_cylinder(rng: np.random.Generator, radius: float, height: float, count: int) -> Surface:
    """Cylinder around the y axis, caps included"""
    side_area = 2 * np.pi * radius * height
    cap_area = np.pi * radius ** 2
    part = rng.choice(3, size=count, p=np.array([side_area, cap_area, cap_area]) / (side_area + 2 * cap_area))
    theta = rng.uniform(0.0, 2 * np.pi, size=count)
    rho = radius * np.sqrt(rng.uniform(0.0, 1.0, size=count))
    y = rng.uniform(-height / 2, height / 2, size=count)
    points = np.empty((count, 3))
    normals = np.zeros((count, 3))

    side = part == 0
    points[side] = np.stack([radius * np.cos(theta[side]), y[side], radius * np.sin(theta[side])], axis=1)
    normals[side] = np.stack([np.cos(theta[side]), np.zeros(side.sum()), np.sin(theta[side])], axis=1)
    for cap, sign in ((1, 1.0), (2, -1.0)):
        mask = part == cap
        points[mask] = np.stack([rho[mask] * np.cos(theta[mask]), np.full(mask.sum(), sign * height / 2),
                                 rho[mask] * np.sin(theta[mask])], axis=1)
        normals[mask, 1] = sign
    return points, normals


def sample_shape(rng: np.random.Generator, kind: str, count: int) -> Tuple[Surface, float]:
    """Surface of one parametric shape and its largest dimension"""
    if kind == 'box':
        half = rng.uniform(0.2, 0.5, size=3)
        return sample_box(rng, half, count), 2 * float(half.max())
    if kind == 'ellipsoid':
        radii = rng.uniform(0.2, 0.5, size=3)
        return sample_ellipsoid(rng, radii, count), 2 * float(radii.max())
    if kind == 'cylinder_box':
        radius = rng.uniform(0.15, 0.3)
        height = rng.uniform(0.4, 0.8)
        half = np.array([rng.uniform(0.2, 0.4), rng.uniform(0.05, 0.15), rng.uniform(0.2, 0.4)])
        top = np.array([0.0, height / 2 + half[1], 0.0])
        n_cyl = count // 2
        cyl_pts, cyl_nrm = sample_cylinder(rng, radius, height, n_cyl)
        box_pts, box_nrm = sample_box(rng, half, count - n_cyl, center=top)
        size = max(2 * radius, 2 * half[0], 2 * half[2], height + 2 * half[1])
        return (np.concatenate([cyl_pts, box_pts]), np.concatenate([cyl_nrm, box_nrm])), float(size)
    raise ValueError(f"Unknown shape kind '{kind}'")


def mirrored(surface: Surface, resolution: int) -> Surface:
    """Append the exact mirror image about x = 0 and keep `resolution` rows"""
    flip = np.array([-1.0, 1.0, 1.0])
    points, normals = surface
    return (np.concatenate([points, points * flip])[:resolution],
            np.concatenate([normals, normals * flip])[:resolution])


def add_handle(rng: np.random.Generator, surface: Surface, size: float, count: int) -> Surface:
    """A box sticking out of the +x side, twice as long as the shape itself"""
    points, normals = surface
    length = 2.0 * size
    half = np.array([length / 2, 0.08 * size, 0.08 * size])
    center = np.array([points[:, 0].max() + length / 2, 0.0, 0.0])
    h_pts, h_nrm = sample_box(rng, half, count, center=center)
    return np.concatenate([points, h_pts]), np.concatenate([normals, h_nrm])


def fit_unit_cube(points: np.ndarray) -> np.ndarray:
    """
    Center y and z on the bounding box, keep the mirror plane at x = 0, and scale so
    the cloud stays inside [-0.5, 0.5]^3 under any rotation about y
    """
    center = (points.min(axis=0) + points.max(axis=0)) / 2.0
    center[0] = 0.0
    centered = points - center
    radius = max(float(np.hypot(centered[:, 0], centered[:, 2]).max()), float(np.abs(centered[:, 1]).max()))
    return centered * (0.5 / radius)


def rotation_about_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def occlude(rng: np.random.Generator, points: np.ndarray, normals: np.ndarray, partial_size: int) -> np.ndarray:
    """Keep points facing a random viewpoint, crop a random half-space, resample to `partial_size`"""
    view = random_unit_vectors(rng, 1)[0]
    visible = normals @ view > 0.0
    crop_dir = random_unit_vectors(rng, 1)[0]
    heights = points @ crop_dir
    visible &= heights <= np.quantile(heights, rng.uniform(0.7, 0.9))
    candidates = np.flatnonzero(visible)
    if candidates.size == 0:
        candidates = np.arange(points.shape[0])
    chosen = rng.choice(candidates, size=partial_size, replace=candidates.size < partial_size)
    return points[np.sort(chosen)]


def make_sample(seed: int, index: int, resolution: int, partial_size: int) -> SampleRecord:
    """One sample, driven only by (seed, index)"""
    rng = np.random.default_rng([seed, index])
    kind = SHAPE_KINDS[index % len(SHAPE_KINDS)]
    symmetric = (index % ASYMMETRIC_EVERY) != ASYMMETRIC_EVERY - 1

    if symmetric:
        surface, _ = sample_shape(rng, kind, (resolution + 1) // 2)
        points, normals = mirrored(surface, resolution)
    else:
        n_handle = int(round(HANDLE_SHARE * resolution))
        n_body = resolution - n_handle
        surface, size = sample_shape(rng, kind, (n_body + 1) // 2)
        points, normals = add_handle(rng, mirrored(surface, n_body), size, n_handle)

    points = fit_unit_cube(points)
    rot = rotation_about_y(rng.uniform(0.0, 2 * np.pi))
    points = points @ rot.T
    normals = normals @ rot.T
    plane = rot @ np.array([1.0, 0.0, 0.0])

    # Round through float32 so the in-memory sample equals its PCF file
    gt = points.astype(np.float32).astype(np.float64)
    partial = occlude(rng, gt, normals, partial_size)
    suffix = '' if symmetric else '-asym'
    return SampleRecord(partial=partial, gt=gt, shape_id=f"{kind}{suffix}-{seed}-{index:05d}",
                        symmetry_plane=plane, kind=kind, symmetric=symmetric)


def gen_synthetic(seed: int, count: int, resolution: int, partial_size: int = 512,
                  threads: Optional[int] = None) -> List[SampleRecord]:
    """Generate `count` samples; results do not depend on the thread count"""
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    if resolution < 2 or partial_size < 1:
        raise ValueError("resolution must be >= 2 and partial_size >= 1")
    threads = get_thread_count() if threads is None else threads

    def build(index: int) -> SampleRecord:
        return make_sample(seed, index, resolution, partial_size)

    if threads <= 1:
        return [build(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(build, range(count)))


def save_dataset(records: List[SampleRecord], out_dir: str, meta: Optional[dict] = None):
    """Write `<id>.partial.pcf`, `<id>.gt.pcf` and a manifest.json per dataset"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for record in records:
        entry = record.to_manifest()
        write_pcf(record.partial, out / entry['partial'])
        write_pcf(record.gt, out / entry['gt'])
        entries.append(entry)
    manifest = {'meta': meta or {}, 'samples': entries}
    with open(out / MANIFEST_NAME, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')
    print(f"[+] Wrote {len(records)} samples to {out}")


def load_dataset(data_dir: str) -> List[SampleRecord]:
    path = os.path.join(data_dir, MANIFEST_NAME)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid manifest: {e}") from e

    if not isinstance(manifest, dict) or not isinstance(manifest.get('samples', []), list):
        raise ValueError(f"{path}: manifest must be an object with a 'samples' list")

    records = []
    for i, entry in enumerate(manifest.get('samples', [])):
        if not isinstance(entry, dict):
            raise ValueError(f"{path}: sample {i} is not an object")
        for key in MANIFEST_KEYS:
            if key not in entry:
                raise ValueError(f"{path}: sample {i} lacks '{key}'")
        plane = entry.get('symmetry_plane')
        records.append(SampleRecord(
            partial=read_pcf(os.path.join(data_dir, entry['partial'])),
            gt=read_pcf(os.path.join(data_dir, entry['gt'])),
            shape_id=entry['shape_id'],
            symmetry_plane=None if plane is None else np.asarray(plane, dtype=np.float64),
            kind=entry.get('kind', ''),
            symmetric=bool(entry.get('symmetric', True)),
        ))
    if not records:
        raise ValueError(f"{path}: dataset is empty")
    return records


def read_manifest_bytes(data_dir: str) -> bytes:
    """Raw manifest contents (used to derive run ids)"""
    with open(os.path.join(data_dir, MANIFEST_NAME), 'rb') as f:
        return f.read()
