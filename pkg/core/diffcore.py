#!/usr/bin/env python3
"""
Minimal reverse-mode differentiation over float64 numpy arrays.

Each op builds a Tensor holding its parents and a closure mapping the output
gradient to one gradient per parent. `backward` walks the graph in reverse
topological order. Index selections (fps, knn, nearest neighbours) are routing
only: gradients flow through the gathered values.
"""

import math
import threading
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ShapeError
from .geometry import nearest_neighbors

ATTENTION_QUERY_CHUNK = 1024

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


class no_grad:
    """Context manager disabling graph construction on the current thread"""

    def __enter__(self):
        self._previous = is_grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._previous
        return False


class Tensor:
    """A shaped float64 array participating in reverse-mode differentiation"""
    __slots__ = ('data', 'requires_grad', 'grad', '_parents', '_backward', 'op', 'name')

    def __init__(self, data, requires_grad: bool = False, _parents: Tuple['Tensor', ...] = (),
                 _backward: Optional[Callable] = None, op: str = ''):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = ''

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op='{self.op}', requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A learnable leaf; `name` is its dotted path inside the model"""
    __slots__ = ()

    def __init__(self, data, name: str = ''):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name


TensorLike = Union[Tensor, np.ndarray, float]


def as_tensor(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, op=op)


def _require_same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch", a.shape, b.shape)


# Element-wise ops

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape('add', a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), 'add')


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape('sub', a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), 'sub')


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape('mul', a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), 'mul')


def scale(x: TensorLike, factor: float) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * factor, (x,), lambda g: (g * factor,), 'scale')


def relu(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), 'relu')


def sqrt(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), 'sqrt')


# Reductions

def sum(x: TensorLike, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    if axis is None:
        return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),), 'sum')
    out = x.data.sum(axis=axis)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)
    return _make(out, (x,), backward, 'sum')


def mean(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    return scale(sum(x), 1.0 / x.data.size)


def max_pool(x: TensorLike, axis: int = 0, keepdims: bool = True) -> Tensor:
    """Max over `axis` recording the argmax (first maximum) for the backward pass"""
    x = as_tensor(x)
    arg = np.argmax(x.data, axis=axis)
    idx = np.expand_dims(arg, axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        grad = np.zeros(x.shape)
        g_full = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, idx, g_full, axis=axis)
        return (grad,)
    return _make(out, (x,), backward, 'max_pool')


def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (x,), backward, 'softmax')


# Shape ops

def reshape(x: TensorLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape: incompatible sizes", x.shape, tuple(shape))
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), 'reshape')


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError("concat: shapes differ off the concat axis", ref, t.shape)
    out = np.concatenate([t.data for t in ts], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, splits, axis=ax)), 'concat')


def gather_rows(x: TensorLike, index: np.ndarray) -> Tensor:
    """x[index]; the index array is routing and carries no gradient"""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    out = x.data[index]

    def backward(g):
        grad = np.zeros(x.shape)
        np.add.at(grad, index, g)
        return (grad,)
    return _make(out, (x,), backward, 'gather_rows')


def expand_rows(x: TensorLike, k: int) -> Tensor:
    """[n, c] -> [n, k, c], each row repeated along a new neighbour axis"""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError("expand_rows expects a 2-d tensor", x.shape)
    out = np.repeat(x.data[:, None, :], k, axis=1)
    return _make(out, (x,), lambda g: (g.sum(axis=1),), 'expand_rows')


def broadcast_row(x: TensorLike, n: int) -> Tensor:
    """[1, c] -> [n, c]"""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] != 1:
        raise ShapeError("broadcast_row expects shape [1, c]", x.shape)
    out = np.repeat(x.data, n, axis=0)
    return _make(out, (x,), lambda g: (g.sum(axis=0, keepdims=True),), 'broadcast_row')


def repeat_rows(x: TensorLike, r: int) -> Tensor:
    """[n, c] -> [n*r, c]; row i occupies output rows i*r .. i*r+r-1"""
    x = as_tensor(x)
    n = x.shape[0]
    out = np.repeat(x.data, r, axis=0)
    return _make(out, (x,), lambda g: (g.reshape((n, r) + x.shape[1:]).sum(axis=1),), 'repeat_rows')


# Linear algebra

def linear(x: TensorLike, weight: TensorLike, bias: Optional[TensorLike] = None) -> Tensor:
    """x[..., c_in] @ W[c_in, c_out] + b[c_out]"""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError("linear: input channels do not match weight", x.shape, weight.shape)
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError("linear: bias does not match weight", bias.shape, weight.shape)
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        x2 = x.data.reshape(-1, weight.shape[0])
        grads = [g @ weight.data.T, x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)
    return _make(out, parents, backward, 'linear')


def bmv(points: TensorLike, matrices: TensorLike) -> Tensor:
    """Row-vector times matrix per point: out[i] = points[i] @ matrices[i]"""
    p, a = as_tensor(points), as_tensor(matrices)
    if p.ndim != 2 or a.ndim != 3 or a.shape[0] != p.shape[0] or a.shape[1] != p.shape[1]:
        raise ShapeError("bmv: expected [n, d] and [n, d, e]", p.shape, a.shape)
    out = np.einsum('ni,nij->nj', p.data, a.data)

    def backward(g):
        return (np.einsum('nj,nij->ni', g, a.data), np.einsum('ni,nj->nij', p.data, g))
    return _make(out, (p, a), backward, 'bmv')


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, c = x.shape
    return x.reshape(n, heads, c // heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, d = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * d)


def attention_weights(q: np.ndarray, k: np.ndarray, heads: int) -> np.ndarray:
    """Softmax(QK^T / sqrt(d)) per head, shape [heads, nq, nk]"""
    d = q.shape[1] // heads
    scores = _split_heads(q, heads) @ _split_heads(k, heads).transpose(0, 2, 1) / math.sqrt(d)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def attention(q: TensorLike, k: TensorLike, v: TensorLike, heads: int) -> Tensor:
    """Scaled dot-product multi-head attention over channel groups"""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2 or q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError("attention: incompatible query/key/value", q.shape, k.shape, v.shape)
    if q.shape[1] % heads or v.shape[1] % heads:
        raise ShapeError(f"attention: {heads} heads do not divide channels", q.shape, v.shape)
    vh = _split_heads(v.data, heads)
    tracking = is_grad_enabled() and (q.requires_grad or k.requires_grad or v.requires_grad)
    if not tracking:
        # Bound memory by evaluating the weights a block of queries at a time
        out = np.empty((q.shape[0], v.shape[1]))
        for start in range(0, q.shape[0], ATTENTION_QUERY_CHUNK):
            stop = start + ATTENTION_QUERY_CHUNK
            weights = attention_weights(q.data[start:stop], k.data, heads)
            out[start:stop] = _merge_heads(weights @ vh)
        return Tensor(out, op='attention')

    d = q.shape[1] // heads
    qh, kh = _split_heads(q.data, heads), _split_heads(k.data, heads)
    weights = attention_weights(q.data, k.data, heads)
    out = _merge_heads(weights @ vh)

    def backward(g):
        gh = _split_heads(g, heads)
        grad_v = weights.transpose(0, 2, 1) @ gh
        grad_w = gh @ vh.transpose(0, 2, 1)
        grad_s = weights * (grad_w - (grad_w * weights).sum(axis=-1, keepdims=True)) / math.sqrt(d)
        grad_q = grad_s @ kh
        grad_k = grad_s.transpose(0, 2, 1) @ qh
        return _merge_heads(grad_q), _merge_heads(grad_k), _merge_heads(grad_v)
    return _make(out, (q, k, v), backward, 'attention')


# Geometry-aware ops

def chamfer_l1(pred: TensorLike, target: np.ndarray) -> Tensor:
    """Differentiable l1 chamfer distance of a predicted cloud against a fixed target"""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[1] != 3 or target.ndim != 2 or target.shape[1] != 3:
        raise ShapeError("chamfer_l1 expects two [n, 3] clouds", pred.shape, target.shape)
    idx_pt, d_pt = nearest_neighbors(pred.data, target)
    idx_tp, d_tp = nearest_neighbors(target, pred.data)
    value = 0.5 * (float(d_pt.mean()) + float(d_tp.mean()))

    def backward(g):
        g = float(g)
        grad = np.zeros(pred.shape)
        with np.errstate(invalid='ignore', divide='ignore'):
            dir_pt = (pred.data - target[idx_pt]) / d_pt[:, None]
            dir_tp = (pred.data[idx_tp] - target) / d_tp[:, None]
        # Coincident points sit at the kink; take the zero subgradient
        dir_pt[d_pt == 0] = 0.0
        dir_tp[d_tp == 0] = 0.0
        grad += dir_pt * (0.5 * g / pred.shape[0])
        np.add.at(grad, idx_tp, dir_tp * (0.5 * g / target.shape[0]))
        return (grad,)
    return _make(np.array(value), (pred,), backward, 'chamfer_l1')


def reflect_points(points: TensorLike, normal: TensorLike) -> Tensor:
    """p - 2 (p.a) / |a|^2 a for every row p, differentiable in both points and normal"""
    p, a = as_tensor(points), as_tensor(normal)
    if p.ndim != 2 or p.shape[1] != 3 or a.data.size != 3:
        raise ShapeError("reflect_points expects [n, 3] points and a 3-vector normal", p.shape, a.shape)
    n = a.data.reshape(3)
    s = float(n @ n)
    d = p.data @ n
    out = p.data - np.outer(2.0 * d / s, n)

    def backward(g):
        ga = g @ n
        grad_p = g - np.outer(2.0 * ga / s, n)
        grad_n = (-2.0 / s) * (ga @ p.data + d @ g) + (4.0 / (s * s)) * float(d @ ga) * n
        return grad_p, grad_n.reshape(a.shape)
    return _make(out, (p, a), backward, 'reflect_points')


# Backward pass

def _topological_order(root: Tensor) -> List[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, parameters: Optional[Sequence[Tensor]] = None):
    """
    Populate `.grad` of every leaf reachable from the scalar `loss`.
    When `parameters` is given their grads are reset to zero first, so unreachable ones read zero.
    """
    if loss.data.size != 1:
        raise ShapeError("backward needs a scalar loss", loss.shape)
    if parameters is not None:
        for p in parameters:
            p.grad = np.zeros(p.shape)
    if not loss.requires_grad:
        return
    grads: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# Modules

def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Container of Parameters and sub-Modules, named by attribute path"""

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + '.')
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{path}.{i}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = ''):
        for name, p in self.named_parameters(prefix):
            p.name = name

    def zero_grad(self):
        for p in self.parameters():
            p.grad = np.zeros(p.shape)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ShapeError(f"state dict mismatch (missing={missing[:3]}, unexpected={unexpected[:3]})")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"state dict entry '{name}' has the wrong shape", value.shape, p.shape)
            p.data = value.copy()

    def num_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()]))


class Linear(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, bias: bool = True):
        self.weight = Parameter(xavier_uniform(rng, c_in, c_out))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def __call__(self, x: TensorLike) -> Tensor:
        return linear(x, self.weight, self.bias)

    def zero_(self, bias: Optional[Sequence[float]] = None):
        """Zero the weights; set the bias to `bias` (or zero)"""
        self.weight.data = np.zeros(self.weight.shape)
        if self.bias is not None:
            self.bias.data = np.zeros(self.bias.shape) if bias is None else np.asarray(bias, dtype=np.float64)


class MLP(Module):
    """Stack of Linear layers with ReLU between them (and after the last when `final_relu`)"""

    def __init__(self, rng: np.random.Generator, sizes: Sequence[int], final_relu: bool = False):
        for i, (c_in, c_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            setattr(self, f"layer{i}", Linear(rng, c_in, c_out))
        self.depth = len(sizes) - 1
        self.final_relu = final_relu

    @property
    def last(self) -> Linear:
        return getattr(self, f"layer{self.depth - 1}")

    def __call__(self, x: TensorLike) -> Tensor:
        for i in range(self.depth):
            x = getattr(self, f"layer{i}")(x)
            if i < self.depth - 1 or self.final_relu:
                x = relu(x)
        return x


# Optimizer

class AdamW:
    """Adam with decoupled weight decay; moment state persists across steps"""

    def __init__(self, params: Sequence[Parameter], lr: float = 0.0002,
                 betas: Tuple[float, float] = (0.9, 0.999), weight_decay: float = 0.01, eps: float = 1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not all(0 < b < 1 for b in betas):
            raise ValueError(f"betas must lie in (0, 1), got {betas}")
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def step(self, grads: Optional[Sequence[np.ndarray]] = None):
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros(p.shape) for p in self.params]
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} gradients, got {len(grads)}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise ShapeError(f"gradient for '{p.name}' has the wrong shape", g.shape, p.shape)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adamw_step(optimizer: AdamW, grads: Optional[Sequence[np.ndarray]] = None):
    """Apply one in-place AdamW update"""
    optimizer.step(grads)
