#!/usr/bin/env python3
"""
Local Symmetry Transformation Network.

Down-samples the partial input to key geometries, predicts a per-point affine
matrix A and translation T, and maps every key point into the missing region:
p_m[i] = p_k[i] @ A[i] + T[i]. The initial cloud is [p_k; p_m].
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from . import diffcore as dc
from .blocks import PointTransformerBlock
from .config import ModelConfig
from .diffcore import MLP, Module, Tensor
from .errors import ShapeError, SizeError
from .geometry import CloudLike, as_points, fps, householder, knn

# diag(-1, 1, 1): mirror about the y-z plane
MIRROR_YZ = np.diag([-1.0, 1.0, 1.0])


@dataclass
class KeyGeometry:
    """Key points selected by fps with their features"""
    p_k: np.ndarray        # [N_k, 3], rows of the input cloud
    f_k: Tensor            # [N_k, C] expanded features
    g: Tensor              # [1, C] global feature
    f_enc: Tensor          # [N_k, enc] post-transformer features, the guidance for SGFormer
    indices: np.ndarray    # rows of the input selected by fps

    @property
    def count(self) -> int:
        return self.p_k.shape[0]


@dataclass
class SymmetryTransform:
    """Point-wise affine matrices and translations, index-aligned with the key points"""
    a: Tensor              # [N_k, 3, 3]
    t: Tensor              # [N_k, 3]

    def __post_init__(self):
        n = self.a.shape[0]
        if self.a.shape != (n, 3, 3) or self.t.shape != (n, 3):
            raise ShapeError("SymmetryTransform expects [n, 3, 3] and [n, 3]", self.a.shape, self.t.shape)


@dataclass
class PartialMissingPair:
    p_k: np.ndarray
    p_m: Tensor
    f_k: Tensor
    f_m: Tensor
    p_init: Tensor


def fps_seed(points: np.ndarray) -> int:
    """Start fps at the point farthest from the bounding-box center (independent of point order)"""
    center = (points.min(axis=0) + points.max(axis=0)) / 2.0
    diff = points - center
    return int(np.argmax(np.einsum('ij,ij->i', diff, diff)))


class LSTNet(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        enc, c = cfg.enc_channels, cfg.c
        self.set_abstraction = MLP(rng, [3, enc // 2, enc], final_relu=True)
        self.transformer = PointTransformerBlock(rng, enc, cfg.knn_k)
        self.expansion = MLP(rng, [enc, c, c])
        if cfg.initial_generator == 'plane':
            self.plane_head = MLP(rng, [c, c // 2, 3])
            self.plane_head.last.zero_(bias=[1.0, 0.0, 0.0])
        else:
            self.affine_head = MLP(rng, [2 * c, c, c // 2, 9])
            self.translation_head = MLP(rng, [2 * c, c, c // 2, 3])
            # Start from a global mirror rather than collapsing every point to the origin
            self.affine_head.last.zero_(bias=MIRROR_YZ.ravel())
            self.translation_head.last.zero_()
        self.n_k = cfg.n_k
        self.knn_k = cfg.knn_k
        self.feature_mode = cfg.lstnet_features
        self.generator = cfg.initial_generator

    def downsample(self, partial: CloudLike) -> KeyGeometry:
        """Set abstraction -> point transformer -> feature expansion, g by max-pooling"""
        points = as_points(partial, 'partial')
        if points.shape[0] < self.n_k:
            raise SizeError(f"partial has {points.shape[0]} points, need at least n_k={self.n_k}")
        indices = fps(points, self.n_k, seed=fps_seed(points))
        p_k = points[indices]

        k = min(self.knn_k, points.shape[0])
        neighbours = knn(p_k, points, k)
        local = points[neighbours] - p_k[:, None, :]
        grouped = dc.max_pool(self.set_abstraction(local), axis=1, keepdims=False)

        f_enc = self.transformer(p_k, grouped)
        f_k = self.expansion(f_enc)
        g = dc.max_pool(f_k, axis=0)
        return KeyGeometry(p_k=p_k, f_k=f_k, g=g, f_enc=f_enc, indices=indices)

    def predict_transform(self, key: KeyGeometry) -> SymmetryTransform:
        """A = reshape(M([f_k, g])), T = N([f_k, g])"""
        if self.generator != 'lstnet':
            raise ValueError("predict_transform needs initial_generator 'lstnet'")
        n = key.count
        local = key.f_k
        glob = dc.broadcast_row(key.g, n)
        if self.feature_mode == 'local':
            glob = Tensor(np.zeros(glob.shape))
        elif self.feature_mode == 'global':
            local = Tensor(np.zeros(local.shape))
        features = dc.concat([local, glob], axis=-1)
        a = dc.reshape(self.affine_head(features), (n, 3, 3))
        t = self.translation_head(features)
        return SymmetryTransform(a=a, t=t)

    def predict_plane(self, key: KeyGeometry) -> Tensor:
        """Normal of a single mirror plane predicted from the global feature"""
        if self.generator != 'plane':
            raise ValueError("predict_plane needs initial_generator 'plane'")
        return self.plane_head(key.g)

    def generate_missing(self, key: KeyGeometry) -> Tuple[Tensor, SymmetryTransform]:
        """The missing part and the transform that produced it"""
        if self.generator == 'plane':
            normal = self.predict_plane(key)
            p_m = dc.reflect_points(key.p_k, normal)
            return p_m, householder_transform(normal.data.reshape(3), key.count)
        st = self.predict_transform(key)
        return transform_points(key.p_k, st), st

    def apply_transform(self, key: KeyGeometry, st: SymmetryTransform,
                        encoder: Callable) -> PartialMissingPair:
        """Build the partial-missing pair; `encoder` produces the features of p_m"""
        if st.a.shape[0] != key.count:
            raise ShapeError("transform rows do not match key points", st.a.shape, key.p_k.shape)
        return self.pair_from(key, transform_points(key.p_k, st), encoder)

    @staticmethod
    def pair_from(key: KeyGeometry, p_m: Tensor, encoder: Callable) -> PartialMissingPair:
        p_init = dc.concat([Tensor(key.p_k), p_m], axis=0)
        f_m = encoder(p_m).features
        return PartialMissingPair(p_k=key.p_k, p_m=p_m, f_k=key.f_enc, f_m=f_m, p_init=p_init)


def transform_points(p_k: np.ndarray, st: SymmetryTransform) -> Tensor:
    """Row-vector convention: p_k[i] @ a[i] + t[i]"""
    return dc.add(dc.bmv(p_k, st.a), st.t)


def householder_transform(normal, count: int, translation: Optional[np.ndarray] = None) -> SymmetryTransform:
    """A transform reproducing the reflection about the plane with `normal` for every point"""
    h = householder(normal)
    t = np.zeros((count, 3)) if translation is None else np.asarray(translation, dtype=np.float64)
    return SymmetryTransform(a=Tensor(np.repeat(h[None], count, axis=0)), t=Tensor(t))
