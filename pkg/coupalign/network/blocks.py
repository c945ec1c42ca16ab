"""
可复用的网络组件：线性层、层归一化、MLP、多头注意力、pre-norm Transformer 块
"""
from typing import Optional

import numpy as np

from coupalign.network.params import ParamStore
from coupalign.tensor import Tensor, layer_norm, linear, matmul, relu, reshape, scale, softmax, transpose


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, bias: bool = True):
        self.weight = store.create(f"{name}.weight", (d_in, d_out))
        self.bias = store.create(f"{name}.bias", (d_out,), init="zeros") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.gamma = store.create(f"{name}.gamma", (dim,), init="ones")
        self.beta = store.create(f"{name}.beta", (dim,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class MLP:
    """linear -> ReLU -> linear"""

    def __init__(self, store: ParamStore, name: str, dim: int, hidden: int):
        self.fc1 = Linear(store, f"{name}.fc1", dim, hidden)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class MultiHeadAttention:
    """缩放点积多头注意力，query [B, Nq, dim]，context [B, Nk, kv_dim]"""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, kv_dim: Optional[int] = None):
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(store, f"{name}.q", dim, dim)
        self.k = Linear(store, f"{name}.k", kv_dim, dim)
        self.v = Linear(store, f"{name}.v", kv_dim, dim)
        self.out = Linear(store, f"{name}.out", dim, dim)

    def _split(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        return transpose(reshape(x, (batch, length, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, context: Optional[Tensor] = None,
                 key_mask: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
        context = x if context is None else context
        q, k, v = self._split(self.q(x)), self._split(self.k(context)), self._split(self.v(context))
        scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(self.head_dim))
        mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
        weights = softmax(scores, axis=-1, mask=mask)
        merged = transpose(matmul(weights, v), (0, 2, 1, 3))
        batch, length = x.shape[0], x.shape[1]
        return self.out(reshape(merged, (batch, length, self.heads * self.head_dim))), weights


class TransformerBlock:
    """pre-norm 自注意力 + MLP，两处残差"""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, mlp_ratio: int):
        self.norm1 = LayerNorm(store, f"{name}.norm1", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads)
        self.norm2 = LayerNorm(store, f"{name}.norm2", dim)
        self.mlp = MLP(store, f"{name}.mlp", dim, dim * mlp_ratio)

    def __call__(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
        attended, weights = self.attn(self.norm1(x), key_mask=key_mask)
        x = x + attended
        return x + self.mlp(self.norm2(x)), weights
