"""
四级图像编码器与语言编码器

图像侧：V_1 是 patch 嵌入 (H/p x W/p x C_1)，第 i 级把 V_i 映射为分辨率减半、通道加倍的 V_{i+1}。
语言侧：L_1 = E，第 i 级把 L_i 映射为同形状的 L_{i+1}；L_g 取最终输出的第 0 行 (分类 token)。
"""
import logging

import numpy as np

from coupalign.network.blocks import LayerNorm, Linear, TransformerBlock
from coupalign.network.params import ParamStore
from coupalign.tensor import Tensor, add, getitem, reshape, take, transpose
from coupalign.utils.errors import ContractError, InputError

logger = logging.getLogger(__name__)

NUM_STAGES = 4
PAD_ID = 0


class PatchEmbed:
    """不重叠的 p x p 图像块 -> 线性投影 -> 层归一化"""

    def __init__(self, store: ParamStore, patch: int, channels: int):
        self.patch = patch
        self.proj = Linear(store, "enc.img.patch.proj", 3 * patch * patch, channels)
        self.norm = LayerNorm(store, "enc.img.patch.norm", channels)

    def __call__(self, images: Tensor) -> Tensor:
        batch, height, width, colours = images.shape
        p = self.patch
        if height % p or width % p:
            raise ContractError(f"图像尺寸 {height}x{width} 不能被 patch 大小 {p} 整除")
        blocks = reshape(images, (batch, height // p, p, width // p, p, colours))
        blocks = transpose(blocks, (0, 1, 3, 2, 4, 5))
        blocks = reshape(blocks, (batch, height // p, width // p, p * p * colours))
        return self.norm(self.proj(blocks))


class ImageStage:
    """patch-merge (2x2 邻域拼接 + 线性到 2C) 后接一个 pre-norm 注意力块"""

    def __init__(self, store: ParamStore, stage: int, channels: int, heads: int, mlp_ratio: int):
        name = f"enc.img.stage{stage}"
        self.stage = stage
        self.merge_norm = LayerNorm(store, f"{name}.merge_norm", 4 * channels)
        self.merge = Linear(store, f"{name}.merge", 4 * channels, 2 * channels, bias=False)
        self.block = TransformerBlock(store, f"{name}.block", 2 * channels, heads, mlp_ratio)

    def __call__(self, v: Tensor) -> Tensor:
        batch, height, width, channels = v.shape
        if height % 2 or width % 2:
            raise ContractError(f"第 {self.stage} 级输入空间尺寸 {height}x{width} 不是偶数")
        grid = reshape(v, (batch, height // 2, 2, width // 2, 2, channels))
        grid = transpose(grid, (0, 1, 3, 2, 4, 5))
        merged = reshape(grid, (batch, height // 2, width // 2, 4 * channels))
        merged = self.merge(self.merge_norm(merged))
        tokens = reshape(merged, (batch, (height // 2) * (width // 2), 2 * channels))
        tokens, _ = self.block(tokens)
        return reshape(tokens, (batch, height // 2, width // 2, 2 * channels))


class TokenEmbedding:
    """词嵌入表 + 可学习位置嵌入"""

    def __init__(self, store: ParamStore, vocab_size: int, t_max: int, dim: int):
        self.vocab_size = vocab_size
        self.t_max = t_max
        self.tokens = store.create("enc.lang.embed.tokens", (vocab_size, dim), init="normal")
        self.positions = store.create("enc.lang.embed.positions", (t_max, dim), init="normal")

    def __call__(self, ids: np.ndarray) -> tuple[Tensor, np.ndarray]:
        ids = np.atleast_2d(np.asarray(ids))
        length = ids.shape[1]
        if length == 0:
            raise InputError("表达式为空")
        if length > self.t_max:
            raise InputError(f"表达式长度 {length} 超过 T_max={self.t_max}")
        if not np.issubdtype(ids.dtype, np.integer):
            if not np.all(ids == np.round(ids)):
                raise InputError("token id 必须是整数")
            ids = ids.astype(np.int64)
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise InputError(f"token id 越界: 取值范围 [{ids.min()}, {ids.max()}]，词表大小 {self.vocab_size}")
        embedded = add(take(self.tokens, ids), getitem(self.positions, slice(0, length)))
        return embedded, ids != PAD_ID


class LanguageStage:
    """带填充掩码的 pre-norm 自注意力块"""

    def __init__(self, store: ParamStore, stage: int, dim: int, heads: int, mlp_ratio: int):
        self.stage = stage
        self.block = TransformerBlock(store, f"enc.lang.stage{stage}", dim, heads, mlp_ratio)

    def __call__(self, l: Tensor, mask: np.ndarray) -> Tensor:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(mask.any(axis=-1)):
            raise ContractError(f"第 {self.stage} 级语言输入全部为填充")
        out, _ = self.block(l, key_mask=mask)
        return out


def extract_sentence(l_final: Tensor) -> Tensor:
    """取分类 token (第 0 行) 作为句子向量 L_g，形状 [B, 1, D]"""
    return getitem(l_final, (slice(None), slice(0, 1), slice(None)))


class ImageEncoder:
    def __init__(self, store: ParamStore, patch: int, c1: int, heads: int, mlp_ratio: int):
        self.c1 = c1
        self.embed = PatchEmbed(store, patch, c1)
        self.stages = [ImageStage(store, i, c1 * 2 ** (i - 1), heads, mlp_ratio) for i in range(1, NUM_STAGES + 1)]

    def channels(self, stage: int) -> int:
        """V_stage 的通道数，stage=5 为编码器输出 V_o"""
        return self.c1 * 2 ** (stage - 1)


class LanguageEncoder:
    def __init__(self, store: ParamStore, vocab_size: int, t_max: int, dim: int, heads: int, mlp_ratio: int):
        self.embed = TokenEmbedding(store, vocab_size, t_max, dim)
        self.stages = [LanguageStage(store, i, dim, heads, mlp_ratio) for i in range(1, NUM_STAGES + 1)]
