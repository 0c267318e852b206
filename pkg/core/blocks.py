"""
Attention building blocks shared by LSTNet and SGFormer
"""

import math

import numpy as np

from . import diffcore as dc
from .diffcore import MLP, Linear, Module, Tensor, TensorLike
from .geometry import knn


class PointTransformerBlock(Module):
    """
    Vector attention over each point's k nearest neighbours (with relative
    position encoding), followed by an output projection and a residual.
    """

    def __init__(self, rng: np.random.Generator, channels: int, k: int):
        self.fc_in = Linear(rng, channels, channels)
        self.w_q = Linear(rng, channels, channels, bias=False)
        self.w_k = Linear(rng, channels, channels, bias=False)
        self.w_v = Linear(rng, channels, channels, bias=False)
        self.pos_mlp = MLP(rng, [3, channels, channels])
        self.attn_mlp = MLP(rng, [channels, channels, channels])
        self.fc_out = Linear(rng, channels, channels)
        self.k = k
        self.channels = channels

    def __call__(self, points: TensorLike, features: Tensor) -> Tensor:
        points = dc.as_tensor(points)
        n = points.shape[0]
        k = min(self.k, n)
        # Neighbourhoods are routing; gradients reach coordinates through the gathers
        idx = knn(points.data, points.data, k)

        x = self.fc_in(features)
        q = self.w_q(x)
        keys = dc.gather_rows(self.w_k(x), idx)
        values = dc.gather_rows(self.w_v(x), idx)
        rel = dc.sub(dc.expand_rows(points, k), dc.gather_rows(points, idx))
        pos = self.pos_mlp(rel)

        logits = self.attn_mlp(dc.add(dc.sub(dc.expand_rows(q, k), keys), pos))
        weights = dc.softmax(dc.scale(logits, 1.0 / math.sqrt(self.channels)), axis=1)
        agg = dc.sum(dc.mul(weights, dc.add(values, pos)), axis=1)
        return dc.add(self.fc_out(agg), features)


class AttentionBlock(Module):
    """Multi-head attention + residual, then a 2-layer feed-forward + residual"""

    def __init__(self, rng: np.random.Generator, channels: int, heads: int):
        self.w_q = Linear(rng, channels, channels)
        self.w_k = Linear(rng, channels, channels)
        self.w_v = Linear(rng, channels, channels)
        self.w_o = Linear(rng, channels, channels)
        self.ffn = MLP(rng, [channels, 2 * channels, channels])
        self.heads = heads

    def __call__(self, x: Tensor, context: Tensor = None) -> Tensor:
        """Self-attention when `context` is None, cross-attention otherwise"""
        context = x if context is None else context
        attended = dc.attention(self.w_q(x), self.w_k(context), self.w_v(context), self.heads)
        x = dc.add(x, self.w_o(attended))
        return dc.add(x, self.ffn(x))
