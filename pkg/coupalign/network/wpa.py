"""
词-像素对齐 (Word-Pixel Alignment)

每一级在视觉特征 V_i 与语言特征 L_i 之间做双向交叉注意力，经门控后残差注入下一级的输入。
注意力作用在投影后的值 (L_i W^l, V_i W^v) 上，再经 Ŵ 投影回另一模态的维度。
"""
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from coupalign.network.blocks import Linear
from coupalign.network.params import ParamStore
from coupalign.tensor import Tensor, matmul, mul, relu, reshape, scale, softmax, tanh, transpose

Mode = Literal["bi", "uni", "off"]


class Gate:
    """Gate(F) = tanh(linear(ReLU(linear(F)))) ⊙ F，逐位置，隐藏层宽度等于输入宽度"""

    def __init__(self, store: ParamStore, name: str, dim: int):
        self.fc1 = Linear(store, f"{name}.fc1", dim, dim)
        self.fc2 = Linear(store, f"{name}.fc2", dim, dim)

    def __call__(self, f: Tensor) -> Tensor:
        return mul(tanh(self.fc2(relu(self.fc1(f)))), f)


@dataclass
class BiAttnResult:
    v_ctx: Optional[Tensor]     # V'_i，视觉到语言的上下文 [B, T, D]；单向模式下为 None
    l_ctx: Tensor       # L'_i，语言到视觉的上下文 [B, P, C_i]
    attn: Tensor        # softmax(Attn_i) [B, P, T]


class WordPixelAlignment:
    def __init__(self, store: ParamStore, stage: int, c_vis: int, d_lang: int, d_joint: int):
        name = f"wpa.stage{stage}"
        self.stage = stage
        self.d_joint = d_joint
        self.Wv = store.create(f"{name}.Wv", (c_vis, d_joint))
        self.Wl = store.create(f"{name}.Wl", (d_lang, d_joint))
        self.Wl_hat = store.create(f"{name}.Wl_hat", (d_joint, c_vis))
        self.Wv_hat = store.create(f"{name}.Wv_hat", (d_joint, d_lang))
        self.gate_v = Gate(store, f"{name}.gate_v", d_lang)
        self.gate_l = Gate(store, f"{name}.gate_l", c_vis)

    def bi_attn(self, v_flat: Tensor, l: Tensor, mask: np.ndarray, vision_to_language: bool = True) -> BiAttnResult:
        """v_flat [B, P, C_i] (网格按行优先展开)，l [B, T, D]，mask [B, T]"""
        mask = np.asarray(mask, dtype=bool)
        v_hat = matmul(v_flat, self.Wv)
        l_hat = matmul(l, self.Wl)
        scores = scale(matmul(v_hat, transpose(l_hat, (0, 2, 1))), 1.0 / np.sqrt(self.d_joint))
        attn = softmax(scores, axis=-1, mask=mask[:, None, :])
        l_ctx = matmul(matmul(attn, l_hat), self.Wl_hat)
        if not vision_to_language:
            return BiAttnResult(v_ctx=None, l_ctx=l_ctx, attn=attn)
        attn_t = softmax(transpose(scores, (0, 2, 1)), axis=-1)
        v_ctx = matmul(matmul(attn_t, v_hat), self.Wv_hat)
        # 填充 token 所在行清零
        v_ctx = mul(v_ctx, mask[:, :, None].astype(v_ctx.dtype))
        return BiAttnResult(v_ctx=v_ctx, l_ctx=l_ctx, attn=attn)

    def __call__(self, v: Tensor, l: Tensor, mask: np.ndarray,
                 mode: Mode) -> tuple[Tensor, Tensor, Optional[Tensor]]:
        """返回 (下一级视觉输入, 下一级语言输入, 注意力图)"""
        if mode == "off":
            return v, l, None
        batch, height, width, channels = v.shape
        result = self.bi_attn(reshape(v, (batch, height * width, channels)), l, mask, vision_to_language=mode == "bi")
        v_next = v + reshape(self.gate_l(result.l_ctx), v.shape)
        if mode == "uni":
            return v_next, l, result.attn
        return v_next, l + self.gate_v(result.v_ctx), result.attn
