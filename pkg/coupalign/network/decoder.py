"""
解码器：掩码生成器、分割头、句子-掩码对齐 (SMA)
"""
import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from coupalign.network.blocks import MLP, LayerNorm, Linear, MultiHeadAttention
from coupalign.network.params import ParamStore
from coupalign.tensor import (
    BatchNormState,
    Tensor,
    batch_norm,
    bilinear_upsample,
    conv2d,
    l2_normalize,
    matmul,
    relu,
    reshape,
    softmax,
    transpose,
)
from coupalign.utils.errors import ConfigError, ContractError

logger = logging.getLogger(__name__)


class DecoderLayer:
    """pre-norm：查询自注意力 -> 对 S_o 的交叉注意力 -> MLP"""

    def __init__(self, store: ParamStore, name: str, d_q: int, heads: int, mlp_ratio: int):
        self.norm1 = LayerNorm(store, f"{name}.norm1", d_q)
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", d_q, heads)
        self.norm2 = LayerNorm(store, f"{name}.norm2", d_q)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", d_q, heads)
        self.norm3 = LayerNorm(store, f"{name}.norm3", d_q)
        self.mlp = MLP(store, f"{name}.mlp", d_q, d_q * mlp_ratio)

    def __call__(self, q: Tensor, memory: Tensor) -> Tensor:
        attended, _ = self.self_attn(self.norm1(q))
        q = q + attended
        attended, _ = self.cross_attn(self.norm2(q), context=memory)
        q = q + attended
        return q + self.mlp(self.norm3(q))


class MaskGenerator:
    """N 个可学习查询经 Transformer 解码器得到掩码嵌入 Q_o"""

    def __init__(self, store: ParamStore, n_queries: int, d_q: int, c_o: int, layers: int,
                 heads: int, mlp_ratio: int):
        if n_queries < 1:
            raise ConfigError(f"掩码提议数 N 必须 >= 1，实际 {n_queries}")
        self.queries = store.create("dec.queries", (n_queries, d_q), init="normal", std=0.02)
        self.memory_proj = Linear(store, "dec.mem_proj", c_o, d_q)
        self.layers = [DecoderLayer(store, f"dec.layer{k}", d_q, heads, mlp_ratio) for k in range(layers)]

    def __call__(self, s_o: Tensor) -> Tensor:
        batch, height, width, channels = s_o.shape
        memory = self.memory_proj(reshape(s_o, (batch, height * width, channels)))
        n, d_q = self.queries.shape
        # 查询在批内共享：与零张量相加完成广播
        q = self.queries + Tensor(np.zeros((batch, n, d_q), dtype=self.queries.dtype))
        for layer in self.layers:
            q = layer(q, memory)
        return q


class ConvBlock:
    """3x3 卷积后接 ReLU 与批归一化 (顺序可配置)"""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, order: str):
        self.order = order
        self.kernel = store.create(f"{name}.kernel", (3, 3, c_in, c_out))
        self.bias = store.create(f"{name}.bias", (c_out,), init="zeros")
        self.gamma = store.create(f"{name}.bn.gamma", (c_out,), init="ones")
        self.beta = store.create(f"{name}.bn.beta", (c_out,), init="zeros")
        self.state = BatchNormState(
            running_mean=store.buffer(f"{name}.bn.running_mean", np.zeros(c_out)),
            running_var=store.buffer(f"{name}.bn.running_var", np.ones(c_out)),
        )

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        x = conv2d(x, self.kernel, self.bias)
        if self.order == "relu_bn":
            return batch_norm(relu(x), self.gamma, self.beta, self.state, training)
        return relu(batch_norm(x, self.gamma, self.beta, self.state, training))


class SegHead:
    """Y_5 = S_o；Y_i = Up(ρ_i(Y_{i+1})) + γ_i(V_i)，i = 4..1"""

    def __init__(self, store: ParamStore, channels: Sequence[int], c_o: int, d_s: int,
                 order: Literal["relu_bn", "bn_relu"] = "relu_bn"):
        self.rho = {}
        self.gamma = {}
        for i in range(4, 0, -1):
            c_in = c_o if i == 4 else d_s
            name = f"dec.seg.rho{i}"
            self.rho[i] = (ConvBlock(store, f"{name}.conv1", c_in, d_s, order),
                           ConvBlock(store, f"{name}.conv2", d_s, d_s, order))
            self.gamma[i] = (store.create(f"dec.seg.gamma{i}.kernel", (1, 1, channels[i - 1], d_s)),
                             store.create(f"dec.seg.gamma{i}.bias", (d_s,), init="zeros"))

    def __call__(self, s_o: Tensor, features: Sequence[Tensor], training: bool) -> Tensor:
        y = s_o
        for i in range(4, 0, -1):
            first, second = self.rho[i]
            up = bilinear_upsample(second(first(y, training), training), 2)
            lateral = conv2d(features[i - 1], *self.gamma[i])
            if up.shape != lateral.shape:
                raise ContractError(f"分割头第 {i} 级尺寸不一致: Up(ρ(Y)) {up.shape} 与 γ(V) {lateral.shape}")
            y = up + lateral
        return y


@dataclass
class SmaOutput:
    q_w: Tensor     # [B, N]
    y_n: Tensor     # [B, N, h, w]
    m: Tensor       # [B, h, w]


class SentenceMaskAlignment:
    """Q_w = softmax(cos(L_g, Q̂_o))，Y_N = Ŷ_1 ⊗ Q̂_o，M = Σ_n Q_w[n] Y_N[n]"""

    def __init__(self, store: ParamStore, d_q: int, d_s: int, d_lang: int):
        self.WQ = store.create("dec.sma.WQ", (d_q, d_lang))
        self.WY = store.create("dec.sma.WY", (d_s, d_lang))

    def __call__(self, q_o: Tensor, y_1: Tensor, l_g: Tensor) -> SmaOutput:
        batch, height, width, _ = y_1.shape
        n = q_o.shape[1]
        q_hat = matmul(q_o, self.WQ)
        y_hat = reshape(matmul(y_1, self.WY), (batch, height * width, -1))
        similarity = matmul(l2_normalize(l_g), transpose(l2_normalize(q_hat), (0, 2, 1)))
        q_w = softmax(reshape(similarity, (batch, n)), axis=-1)
        per_pixel = matmul(y_hat, transpose(q_hat, (0, 2, 1)))
        y_n = reshape(transpose(per_pixel, (0, 2, 1)), (batch, n, height, width))
        m = matmul(per_pixel, reshape(q_w, (batch, n, 1)))
        return SmaOutput(q_w=q_w, y_n=y_n, m=reshape(m, (batch, height, width)))


class MaskHead:
    """关闭 SMA 时的读出：Y_1 上的 1x1 卷积 d_s -> 1"""

    def __init__(self, store: ParamStore, d_s: int):
        self.kernel = store.create("dec.mask_head.kernel", (1, 1, d_s, 1))
        self.bias = store.create("dec.mask_head.bias", (1,), init="zeros")

    def __call__(self, y_1: Tensor) -> Tensor:
        out = conv2d(y_1, self.kernel, self.bias)
        return reshape(out, out.shape[:-1])
