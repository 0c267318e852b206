#!/usr/bin/env python3
"""
SymmCompletion - point cloud completion by local symmetry transformation
and symmetry-guided refinement
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .config import ModelConfig
from .diffcore import Module, Tensor
from .geometry import CloudLike, as_points
from .lstnet import KeyGeometry, LSTNet, PartialMissingPair, SymmetryTransform
from .sgformer import SGFormer


@dataclass
class CompletionResult:
    p_init: Tensor
    fines: List[Tensor]
    key: KeyGeometry
    transform: SymmetryTransform
    pair: PartialMissingPair

    @property
    def output(self) -> Tensor:
        return self.fines[-1]

    def counts(self) -> List[int]:
        return [self.p_init.shape[0]] + [f.shape[0] for f in self.fines]

    def clouds(self) -> dict:
        """Plain arrays for export"""
        out = {'p_init': self.p_init.data, 'p_m': self.pair.p_m.data}
        for i, fine in enumerate(self.fines, 1):
            out[f'fine{i}'] = fine.data
        return out


class SymmCompletion(Module):
    def __init__(self, cfg: ModelConfig):
        """Build every parameter from cfg.seed so identical configs give identical models"""
        rng = np.random.default_rng(cfg.seed)
        self.lstnet = LSTNet(cfg, rng)
        self.sgformer = SGFormer(cfg, rng)
        self.cfg = cfg
        self.assign_names()

    def with_guidance(self, use_f_k: bool, use_f_m: bool) -> 'SymmCompletion':
        """Switch the guidance paths in place (parameters are untouched)"""
        self.cfg = self.cfg.replace(use_f_k=use_f_k, use_f_m=use_f_m)
        return self

    def complete(self, partial: CloudLike) -> CompletionResult:
        points = as_points(partial, 'partial')
        key = self.lstnet.downsample(points)
        p_m, transform = self.lstnet.generate_missing(key)
        # The stage-1 encoder also provides F_m
        pair = self.lstnet.pair_from(key, p_m, self.sgformer.stage1.encode)
        fines = self.sgformer(pair.p_init, pair.f_k, pair.f_m, self.cfg.use_f_k, self.cfg.use_f_m)
        return CompletionResult(p_init=pair.p_init, fines=fines, key=key, transform=transform, pair=pair)


def complete(partial: CloudLike, cfg: ModelConfig, model: Optional[SymmCompletion] = None) -> CompletionResult:
    """Run LSTNet and both SGFormer stages on one partial cloud"""
    model = model or SymmCompletion(cfg)
    return model.complete(partial)


def count_params(cfg: ModelConfig) -> int:
    """Total scalar parameter count of the model assembled from cfg"""
    return SymmCompletion(cfg).num_parameters()
