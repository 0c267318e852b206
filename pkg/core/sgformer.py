#!/usr/bin/env python3
"""
Symmetry-Guidance Transformer.

Each stage encodes its input cloud, fuses dual-path guidance from the key
features F_k and missing-part features F_m (cross-attention then
self-attention per path), decodes with two self-attention blocks and
upsamples by repeating every point r times plus predicted offsets.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import diffcore as dc
from .blocks import AttentionBlock, PointTransformerBlock
from .config import ModelConfig
from .diffcore import MLP, Module, Tensor, TensorLike
from .errors import ShapeError


@dataclass
class FeatureSet:
    """Points with row-aligned per-point features"""
    points: Tensor
    features: Tensor

    def __post_init__(self):
        self.points = dc.as_tensor(self.points)
        if self.features.ndim != 2 or self.features.shape[0] != self.points.shape[0]:
            raise ShapeError("features must be row-aligned with points", self.points.shape, self.features.shape)

    @property
    def channels(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class StageConfig:
    ratio: int
    enc_channels: int
    fuse_channels: int
    heads: int
    knn_k: int

    @property
    def fused_channels(self) -> int:
        return 2 * self.fuse_channels


class Encoder(Module):
    """Shared point MLP, max-pooled global context, fusion MLP, point transformer"""

    def __init__(self, rng: np.random.Generator, enc: int, knn_k: int):
        self.point_mlp = MLP(rng, [3, enc // 2, enc], final_relu=True)
        self.fuse_mlp = MLP(rng, [2 * enc, enc, enc])
        self.transformer = PointTransformerBlock(rng, enc, knn_k)

    def __call__(self, cloud: TensorLike) -> FeatureSet:
        cloud = dc.as_tensor(cloud)
        n = cloud.shape[0]
        local = self.point_mlp(cloud)
        glob = dc.max_pool(local, axis=0)
        fused = self.fuse_mlp(dc.concat([local, dc.broadcast_row(glob, n)], axis=-1))
        return FeatureSet(points=cloud, features=self.transformer(cloud, fused))


class GuidancePath(Module):
    """Lift to the path width, cross-attend to the guidance source, then self-attend"""

    def __init__(self, rng: np.random.Generator, enc: int, width: int, heads: int):
        self.lift_query = MLP(rng, [enc, width, width])
        self.lift_source = MLP(rng, [enc, width, width])
        self.cross = AttentionBlock(rng, width, heads)
        self.self_attn = AttentionBlock(rng, width, heads)

    def __call__(self, f_init: Tensor, f_source: Tensor, enabled: bool = True) -> Tensor:
        x = self.lift_query(f_init)
        if enabled:
            x = self.cross(x, self.lift_source(f_source))
        return self.self_attn(x)


class SGFormerStage(Module):
    def __init__(self, stage: StageConfig, rng: np.random.Generator):
        self.encoder = Encoder(rng, stage.enc_channels, stage.knn_k)
        self.key_path = GuidancePath(rng, stage.enc_channels, stage.fuse_channels, stage.heads)
        self.missing_path = GuidancePath(rng, stage.enc_channels, stage.fuse_channels, stage.heads)
        fused = stage.fused_channels
        self.decoder = [AttentionBlock(rng, fused, stage.heads) for _ in range(2)]
        self.point_shuffle = MLP(rng, [fused, stage.fuse_channels, 3 * stage.ratio])
        # Offsets start at zero so refinement begins at the input cloud
        self.point_shuffle.last.zero_()
        self.stage = stage

    def encode(self, cloud: TensorLike) -> FeatureSet:
        return self.encoder(cloud)

    def dual_path_fuse(self, f_init: FeatureSet, f_k: Tensor, f_m: Tensor,
                       use_f_k: bool = True, use_f_m: bool = True) -> FeatureSet:
        """[phi(F_init, F_k), beta(F_init, F_m)] -> 2 * fuse channels"""
        enc = self.stage.enc_channels
        for name, f in (('F_init', f_init.features), ('F_k', f_k), ('F_m', f_m)):
            if f.ndim != 2 or f.shape[1] != enc:
                raise ShapeError(f"{name} must have {enc} channels", f.shape)
        key = self.key_path(f_init.features, f_k, enabled=use_f_k)
        missing = self.missing_path(f_init.features, f_m, enabled=use_f_m)
        return FeatureSet(points=f_init.points, features=dc.concat([key, missing], axis=-1))

    def refine(self, p_in: TensorLike, fused: FeatureSet) -> Tensor:
        """P_fine = R(P_in) + S(theta(F'))"""
        p_in = dc.as_tensor(p_in)
        n, r = p_in.shape[0], self.stage.ratio
        if fused.features.shape[0] != n:
            raise ShapeError("fused features are not row-aligned with the input", fused.features.shape, p_in.shape)
        h = fused.features
        for block in self.decoder:
            h = block(h)
        offsets = dc.reshape(self.point_shuffle(h), (n * r, 3))
        return dc.add(dc.repeat_rows(p_in, r), offsets)

    def __call__(self, cloud: TensorLike, f_k: Tensor, f_m: Tensor,
                 use_f_k: bool = True, use_f_m: bool = True) -> Tensor:
        f_init = self.encode(cloud)
        fused = self.dual_path_fuse(f_init, f_k, f_m, use_f_k, use_f_m)
        return self.refine(f_init.points, fused)


def stage_configs(cfg: ModelConfig) -> List[StageConfig]:
    return [StageConfig(ratio=r, enc_channels=cfg.enc_channels, fuse_channels=cfg.fuse_channels,
                        heads=cfg.heads, knn_k=cfg.knn_k) for r in cfg.ratios]


class SGFormer(Module):
    """Two cascaded stages; guidance features are shared by both"""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        first, second = stage_configs(cfg)
        self.stage1 = SGFormerStage(first, rng)
        self.stage2 = SGFormerStage(second, rng)

    @property
    def stages(self) -> Sequence[SGFormerStage]:
        return (self.stage1, self.stage2)

    def __call__(self, p_init: Tensor, f_k: Tensor, f_m: Tensor,
                 use_f_k: bool = True, use_f_m: bool = True) -> List[Tensor]:
        fines = []
        current = p_init
        for stage in self.stages:
            current = stage(current, f_k, f_m, use_f_k, use_f_m)
            fines.append(current)
        return fines
