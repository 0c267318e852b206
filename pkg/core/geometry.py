#!/usr/bin/env python3
"""
Geometric kernels and evaluation metrics for point clouds.

Every accelerated kernel has a brute-force counterpart computing distances with
the same formula, so both paths agree exactly (ties break toward the lowest
reference index in either path).
"""

from dataclasses import dataclass, asdict
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, SizeError

# Below this many query/reference pairs the chunked brute force is faster than the grid
GRID_MIN_PAIRS = 1 << 18
BRUTE_FORCE_CHUNK = 1 << 21  # pairwise entries per chunk


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points"""
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'points', as_points(self.points))

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def __len__(self) -> int:
        return self.count


@dataclass
class MetricsRecord:
    """Per-sample evaluation metrics"""
    shape_id: str
    cd_l1: float
    cd_l2: float
    f1: float
    fd: float
    mmd: float

    def to_dict(self) -> Dict:
        return asdict(self)


METRIC_NAMES = ('cd_l1', 'cd_l2', 'f1', 'fd', 'mmd')


def aggregate_metrics(records: Sequence[MetricsRecord]) -> Dict[str, float]:
    """Mean of every metric over the records (zeros when there are none)"""
    if not records:
        return {name: 0.0 for name in METRIC_NAMES}
    return {name: float(np.mean([getattr(r, name) for r in records])) for name in METRIC_NAMES}


CloudLike = Union[PointCloud, np.ndarray, Sequence[Sequence[float]]]


def as_points(cloud: CloudLike, name: str = 'cloud') -> np.ndarray:
    """Validate and return an [n, 3] float64 array"""
    if isinstance(cloud, PointCloud):
        return cloud.points
    points = np.asarray(cloud, dtype=np.float64)
    if points.size == 0:
        raise DomainError(f"{name} is empty")
    if points.ndim != 2 or points.shape[1] != 3:
        raise DomainError(f"{name} must have shape [n, 3], got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise DomainError(f"{name} contains non-finite coordinates")
    return points


def _squared_distances(queries: np.ndarray, reference: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - reference[None, :, :]
    return np.einsum('ijk,ijk->ij', diff, diff)


def _select_k(sq: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Per row, the k candidates with smallest distance.

    `candidates` must be ascending so the stable sort breaks ties toward the lowest index.
    """
    order = np.argsort(sq, axis=1, kind='stable')[:, :k]
    return candidates[order]


def knn_brute_force(queries: CloudLike, reference: CloudLike, k: int) -> np.ndarray:
    """O(N*M) k-nearest-neighbour oracle, returns [n_queries, k] indices"""
    q = as_points(queries, 'queries')
    ref = as_points(reference, 'reference')
    if k < 1 or k > ref.shape[0]:
        raise SizeError(f"k={k} must be in [1, {ref.shape[0]}]")
    result = np.empty((q.shape[0], k), dtype=np.int64)
    chunk = max(1, BRUTE_FORCE_CHUNK // ref.shape[0])
    all_idx = np.arange(ref.shape[0])
    for start in range(0, q.shape[0], chunk):
        sq = _squared_distances(q[start:start + chunk], ref)
        if k == 1:
            # argmin returns the first minimum: lowest index on ties
            result[start:start + chunk, 0] = np.argmin(sq, axis=1)
        else:
            result[start:start + chunk] = _select_k(sq, all_idx, k)
    return result


class SpatialGrid:
    """
    Uniform grid over a reference cloud for exact k-NN queries.
    Cell size is the bounding-box diagonal divided by the cube root of the point count.
    """

    def __init__(self, reference: CloudLike):
        self.points = as_points(reference, 'reference')
        n = self.points.shape[0]
        self.lower = self.points.min(axis=0)
        extent = self.points.max(axis=0) - self.lower
        diagonal = float(np.linalg.norm(extent))
        self.cell = diagonal / np.cbrt(n) if diagonal > 0 else 0.0
        self.degenerate = self.cell == 0.0
        if self.degenerate:
            return
        self.dims = np.floor(extent / self.cell).astype(np.int64) + 1
        cells = self._cell_of(self.points)
        ids = self._linear_id(cells)
        self.order = np.argsort(ids, kind='stable')
        sorted_ids = ids[self.order]
        n_cells = int(np.prod(self.dims))
        self.starts = np.searchsorted(sorted_ids, np.arange(n_cells), side='left')
        self.ends = np.searchsorted(sorted_ids, np.arange(n_cells), side='right')

    def _cell_of(self, points: np.ndarray) -> np.ndarray:
        cells = np.floor((points - self.lower) / self.cell).astype(np.int64)
        return np.clip(cells, 0, self.dims - 1)

    def _linear_id(self, cells: np.ndarray) -> np.ndarray:
        return (cells[..., 0] * self.dims[1] + cells[..., 1]) * self.dims[2] + cells[..., 2]

    def _cube_candidates(self, center: np.ndarray, radius: int) -> np.ndarray:
        lo = np.maximum(center - radius, 0)
        hi = np.minimum(center + radius, self.dims - 1)
        xs, ys, zs = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1),
                                 np.arange(lo[2], hi[2] + 1), indexing='ij')
        ids = self._linear_id(np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1))
        spans = [self.order[s:e] for s, e in zip(self.starts[ids], self.ends[ids]) if e > s]
        if not spans:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(spans))

    def query(self, queries: CloudLike, k: int) -> np.ndarray:
        q = as_points(queries, 'queries')
        n_ref = self.points.shape[0]
        if k < 1 or k > n_ref:
            raise SizeError(f"k={k} must be in [1, {n_ref}]")
        if self.degenerate:
            return knn_brute_force(q, self.points, k)

        result = np.empty((q.shape[0], k), dtype=np.int64)
        q_cells = self._cell_of(q)
        q_ids = self._linear_id(q_cells)
        max_radius = int(self.dims.max())
        # Queries sharing a cell share their candidate sets
        for cell_id in np.unique(q_ids):
            members = np.nonzero(q_ids == cell_id)[0]
            center = q_cells[members[0]]
            radius = 1
            while True:
                candidates = self._cube_candidates(center, radius)
                if candidates.size >= k:
                    sq = _squared_distances(q[members], self.points[candidates])
                    kth = np.partition(sq, k - 1, axis=1)[:, k - 1]
                    bound = radius * self.cell
                    # Unvisited cells are at least `bound` away; strict so equal-distance ties are seen
                    if radius >= max_radius or np.all(kth < bound * bound):
                        result[members] = _select_k(sq, candidates, k)
                        break
                elif radius >= max_radius:
                    raise SizeError(f"k={k} exceeds reference size {n_ref}")
                radius += 1
        return result


def knn(queries: CloudLike, reference: CloudLike, k: int, method: str = 'auto') -> np.ndarray:
    """
    k nearest reference indices per query, ascending by distance, ties to the lowest index.

    Args:
        method: 'auto' picks the brute force for small problems, 'grid' or 'brute' force a path
    """
    q = as_points(queries, 'queries')
    ref = as_points(reference, 'reference')
    if k < 1 or k > ref.shape[0]:
        raise SizeError(f"k={k} must be in [1, {ref.shape[0]}]")
    if method == 'brute' or (method == 'auto' and q.shape[0] * ref.shape[0] < GRID_MIN_PAIRS):
        return knn_brute_force(q, ref, k)
    if method not in ('auto', 'grid'):
        raise ValueError(f"Unknown knn method '{method}'")
    return SpatialGrid(ref).query(q, k)


def nearest_neighbors(queries: CloudLike, reference: CloudLike,
                      method: str = 'auto') -> Tuple[np.ndarray, np.ndarray]:
    """Index of and Euclidean distance to the nearest reference point, per query"""
    q = as_points(queries, 'queries')
    ref = as_points(reference, 'reference')
    idx = knn(q, ref, 1, method=method)[:, 0]
    diff = q - ref[idx]
    return idx, np.sqrt(np.einsum('ij,ij->i', diff, diff))


def fps(cloud: CloudLike, m: int, seed: int = 0) -> np.ndarray:
    """Farthest point sampling, starting at `seed`, ties to the lowest index"""
    points = as_points(cloud)
    n = points.shape[0]
    if m < 1 or m > n:
        raise SizeError(f"Cannot sample m={m} points from a cloud of {n}")
    if not 0 <= seed < n:
        raise SizeError(f"seed index {seed} out of range for a cloud of {n}")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = seed
    min_sq = np.full(n, np.inf)
    for i in range(1, m):
        diff = points - points[selected[i - 1]]
        min_sq = np.minimum(min_sq, np.einsum('ij,ij->i', diff, diff))
        min_sq[selected[i - 1]] = -np.inf
        selected[i] = int(np.argmax(min_sq))
    return selected


def chamfer_l1(p: CloudLike, q: CloudLike, method: str = 'auto') -> float:
    """Half the sum of both directional mean Euclidean nearest distances"""
    p, q = as_points(p, 'p'), as_points(q, 'q')
    _, d_pq = nearest_neighbors(p, q, method)
    _, d_qp = nearest_neighbors(q, p, method)
    return 0.5 * (float(d_pq.mean()) + float(d_qp.mean()))


def chamfer_l2(p: CloudLike, q: CloudLike, method: str = 'auto') -> float:
    """Sum of both directional mean squared nearest distances"""
    p, q = as_points(p, 'p'), as_points(q, 'q')
    _, d_pq = nearest_neighbors(p, q, method)
    _, d_qp = nearest_neighbors(q, p, method)
    return float((d_pq ** 2).mean()) + float((d_qp ** 2).mean())


def chamfer_l1_brute_force(p: CloudLike, q: CloudLike) -> float:
    sq = _squared_distances(as_points(p, 'p'), as_points(q, 'q'))
    return 0.5 * (float(np.sqrt(sq.min(axis=1)).mean()) + float(np.sqrt(sq.min(axis=0)).mean()))


def chamfer_l2_brute_force(p: CloudLike, q: CloudLike) -> float:
    sq = _squared_distances(as_points(p, 'p'), as_points(q, 'q'))
    return float(sq.min(axis=1).mean()) + float(sq.min(axis=0).mean())


def f1_score(p: CloudLike, q: CloudLike, threshold: float = 0.01) -> float:
    """F-score of precision (p near q) and recall (q near p) under `threshold`"""
    if threshold <= 0:
        raise DomainError(f"threshold must be positive, got {threshold}")
    p, q = as_points(p, 'p'), as_points(q, 'q')
    _, d_pq = nearest_neighbors(p, q)
    _, d_qp = nearest_neighbors(q, p)
    precision = float(np.mean(d_pq < threshold))
    recall = float(np.mean(d_qp < threshold))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def fidelity_distance(input_cloud: CloudLike, output: CloudLike, method: str = 'auto') -> float:
    """Mean distance from each input point to the output (single-sided)"""
    _, d = nearest_neighbors(as_points(input_cloud, 'input'), as_points(output, 'output'), method)
    return float(d.mean())


def mmd(output: CloudLike, gallery: Iterable[CloudLike]) -> float:
    """Minimal l2 chamfer distance between `output` and any gallery member"""
    out = as_points(output, 'output')
    members = list(gallery)
    if not members:
        raise DomainError("MMD gallery is empty")
    return min(chamfer_l2(out, member) for member in members)


def reflect_about_plane(p: CloudLike, normal: Sequence[float]) -> np.ndarray:
    """Mirror every point about the plane through the origin with the given normal"""
    points = as_points(p)
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    norm_sq = float(n @ n)
    if norm_sq == 0.0 or not np.isfinite(norm_sq):
        raise DomainError("reflection normal must be non-zero and finite")
    return points - np.outer(2.0 * (points @ n) / norm_sq, n)


def householder(normal: Sequence[float]) -> np.ndarray:
    """The 3x3 reflection matrix I - 2nn^T/|n|^2"""
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    norm_sq = float(n @ n)
    if norm_sq == 0.0:
        raise DomainError("reflection normal must be non-zero")
    return np.eye(3) - 2.0 * np.outer(n, n) / norm_sq


def reflection_baseline(partial: CloudLike, normal: Sequence[float]) -> np.ndarray:
    """Initial cloud made of the partial and its mirror image"""
    points = as_points(partial, 'partial')
    return np.concatenate([points, reflect_about_plane(points, normal)], axis=0)


def reflection_cd(cloud: CloudLike, normal: Sequence[float]) -> float:
    """How far a cloud is from being mirror-symmetric about the plane"""
    points = as_points(cloud)
    return chamfer_l1(points, reflect_about_plane(points, normal))


def normalization(points: CloudLike, half_extent: float = 0.5) -> Tuple[np.ndarray, float]:
    """Bounding-box center and the factor that scales the largest half-extent to `half_extent`"""
    pts = as_points(points)
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    scale = float(np.abs(pts - center).max())
    return center, (half_extent / scale if scale > 0.0 else 1.0)


def normalize_cloud(points: CloudLike, half_extent: float = 0.5) -> np.ndarray:
    """Center on the bounding-box center and scale the largest half-extent to `half_extent`"""
    center, factor = normalization(points, half_extent)
    return (as_points(points) - center) * factor


def denormalize_cloud(points: CloudLike, center: np.ndarray, factor: float) -> np.ndarray:
    """Inverse of normalize_cloud for the given center and factor"""
    return as_points(points) / factor + center


def random_unit_vectors(rng: np.random.Generator, count: int) -> np.ndarray:
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)

