"""
编码器之后的跨模态融合

F_o = [V_o W_o^v + e_p ; L_o W_o^l]，做一层 pre-norm 多头自注意力 (无 FFN)，
取前 H_o*W_o 行投影回 C_o，再与 V_o 残差相加得到 S_o。
"""
import numpy as np

from coupalign.network.blocks import LayerNorm, Linear, MultiHeadAttention
from coupalign.network.params import ParamStore
from coupalign.tensor import Tensor, add, concat, getitem, matmul, reshape
from coupalign.utils.errors import DimensionError


class CrossFusion:
    def __init__(self, store: ParamStore, grid: tuple[int, int], c_out: int, d_lang: int, heads: int):
        self.grid = grid
        self.Wv = store.create("fusion.Wv", (c_out, d_lang))
        self.Wl = store.create("fusion.Wl", (d_lang, d_lang))
        self.pos = store.create("fusion.pos", (grid[0], grid[1], d_lang), init="normal")
        self.norm = LayerNorm(store, "fusion.norm", d_lang)
        self.attn = MultiHeadAttention(store, "fusion.attn", d_lang, heads)
        self.out = Linear(store, "fusion.out", d_lang, c_out)

    def __call__(self, v_o: Tensor, l_o: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """v_o [B, H_o, W_o, C_o]，l_o [B, T, D] -> (S_o, 注意力权重)"""
        batch, height, width, channels = v_o.shape
        if (height, width) != self.grid or channels != self.Wv.shape[0]:
            raise DimensionError(f"fusion: V_o 形状 {v_o.shape} 与参数 {self.grid}x{self.Wv.shape[0]} 不匹配")
        pixels = height * width
        v_proj = add(matmul(v_o, self.Wv), self.pos)
        f_o = concat([reshape(v_proj, (batch, pixels, -1)), matmul(l_o, self.Wl)], axis=1)
        key_mask = np.concatenate([np.ones((batch, pixels), dtype=bool), np.asarray(mask, dtype=bool)], axis=1)
        fused, weights = self.attn(self.norm(f_o), key_mask=key_mask)
        vision = getitem(fused, (slice(None), slice(0, pixels), slice(None)))
        s_o = reshape(self.out(vision), v_o.shape)
        return s_o + v_o, weights
